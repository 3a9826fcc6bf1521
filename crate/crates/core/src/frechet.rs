//! Sample Fréchet functions and means on the quotient spaces.
//!
//! The mean is found by the usual Riemannian fixed-point scheme: lift every
//! sample into optimal position to the current estimate, average the
//! sphere logarithms, step along the average. A step that raises the
//! Fréchet function is halved (at most 30 times).

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, ShapeError};
use crate::geometry::{sphere_exp, PreShape, TangentVector};
use crate::shape_spaces::procrustes;
use crate::shape_spaces::ShapeSpaceKind;

const MAX_HALVINGS: usize = 30;
/// Consecutive accepted steps that neither decrease the Fréchet function
/// beyond roundoff nor halve the best residual so far end the iteration.
const PLATEAU_STEPS: usize = 5;
/// On such a plateau the residual may exceed `tol` by at most this factor
/// and still count as converged.
const PLATEAU_SLACK: f64 = 100.0;
const INIT_CANDIDATES: usize = 10;
/// The default start runs the iteration from this many of the best
/// candidates and keeps the lowest result.
const INIT_STARTS: usize = 3;
/// Up to this size every sample is a starting candidate.
const INIT_EXHAUSTIVE: usize = 256;

/// Options for [`frechet_mean`].
#[derive(Clone, Debug)]
pub struct MeanOptions {
    /// Stop once the norm of the averaged logarithm is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting representative. When absent the iteration runs from the
    /// three best candidates of [`default_init`]'s search and keeps the
    /// lowest Fréchet function value.
    pub init: Option<PreShape>,
    /// Align samples in parallel. Sums are always taken sequentially in
    /// sample order, so the result does not depend on this flag.
    pub parallel: bool,
}

impl Default for MeanOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            init: None,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MeanResult {
    #[serde(skip)]
    pub mean: PreShape,
    pub iterations: usize,
    /// Norm of the averaged logarithm at `mean`.
    pub residual: f64,
    /// Fréchet function at `mean`.
    pub value: f64,
    /// Fraction of samples whose optimal lift to `mean` is unique.
    pub unique_alignments: f64,
    pub converged: bool,
    /// Fréchet function value of every accepted iterate, starting at init.
    pub trace: Vec<f64>,
}

impl MeanResult {
    /// Turns a non-converged result into [`ShapeError::NoConvergence`].
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(ShapeError::NoConvergence {
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

fn check_samples(samples: &[&PreShape]) -> Result<(usize, usize)> {
    let first = samples.first().ok_or(ShapeError::EmptySample)?;
    let shape = first.matrix().shape();
    for s in samples {
        let (m, k) = s.matrix().shape();
        if m != shape.0 {
            return Err(ShapeError::DimensionMismatch {
                expected: shape.0,
                found: m,
            });
        }
        if k != shape.1 {
            return Err(ShapeError::DimensionMismatch {
                expected: shape.1,
                found: k,
            });
        }
    }
    Ok(shape)
}

/// Everything one alignment pass at a base point yields.
struct Pass {
    value: f64,
    log_mean: DMatrix<f64>,
    unique: f64,
}

/// Contribution of one sample: weighted squared distance and weighted log.
fn accumulate(
    base: &[f64],
    sample: &[f64],
    m: usize,
    k: usize,
    kind: ShapeSpaceKind,
    weight: f64,
    scratch: &mut [f64],
    log_acc: &mut [f64],
) -> (f64, bool) {
    let fit = procrustes::fit(base, sample, m, k, kind);
    procrustes::apply_into(&fit.rotation, fit.relabel, sample, m, k, scratch);
    let cos: f64 = base.iter().zip(scratch.iter()).map(|(p, q)| p * q).sum();
    let mut len2 = 0.0;
    for (q, p) in scratch.iter_mut().zip(base) {
        *q -= cos * p;
        len2 += *q * *q;
    }
    let len = len2.sqrt();
    let d = len.atan2(cos);
    if len > 0.0 {
        let coef = weight * d / len;
        for (acc, q) in log_acc.iter_mut().zip(scratch.iter()) {
            *acc += coef * q;
        }
    }
    (weight * d * d, fit.unique)
}

fn alignment_pass(
    base: &PreShape,
    samples: &[&PreShape],
    weights: Option<&[f64]>,
    kind: ShapeSpaceKind,
    parallel: bool,
) -> Pass {
    let (m, k) = base.matrix().shape();
    let b = base.matrix().as_slice();
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..samples.len()).map(w).sum();
    let mut log_acc = vec![0.0; m * k];
    let mut value = 0.0;
    let mut unique = 0.0;
    if parallel {
        let parts: Vec<(f64, bool, Vec<f64>)> = samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let mut scratch = vec![0.0; m * k];
                let mut log = vec![0.0; m * k];
                let (v, u) = accumulate(b, s.matrix().as_slice(), m, k, kind, w(i), &mut scratch, &mut log);
                (v, u, log)
            })
            .collect();
        for (i, (v, u, log)) in parts.into_iter().enumerate() {
            value += v;
            if u {
                unique += w(i);
            }
            for (acc, l) in log_acc.iter_mut().zip(&log) {
                *acc += l;
            }
        }
    } else {
        let mut scratch = vec![0.0; m * k];
        let mut log = vec![0.0; m * k];
        for (i, s) in samples.iter().enumerate() {
            log.iter_mut().for_each(|x| *x = 0.0);
            let (v, u) = accumulate(b, s.matrix().as_slice(), m, k, kind, w(i), &mut scratch, &mut log);
            value += v;
            if u {
                unique += w(i);
            }
            for (acc, l) in log_acc.iter_mut().zip(&log) {
                *acc += l;
            }
        }
    }
    let log_mean = DMatrix::from_vec(m, k, log_acc) / total;
    Pass {
        value: value / total,
        log_mean,
        unique: unique / total,
    }
}

/// `F(q) = (1/n) sum_j d(q, X_j)^2` in the quotient of the given kind.
pub fn frechet_function(q: &PreShape, samples: &[PreShape], kind: ShapeSpaceKind) -> Result<f64> {
    let refs: Vec<&PreShape> = samples.iter().collect();
    check_samples(&refs)?;
    Ok(alignment_pass(q, &refs, None, kind, false).value)
}

fn lex_cmp(a: &PreShape, b: &PreShape) -> std::cmp::Ordering {
    a.matrix()
        .iter()
        .zip(b.matrix().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Default starting point: the sample with the smallest Fréchet function
/// value. Up to 256 samples all are tried, which makes the choice invariant
/// under the group action; larger samples try ten spread evenly over the
/// lexicographically sorted sample. Deterministic and independent of sample
/// order either way.
pub fn default_init(samples: &[PreShape], kind: ShapeSpaceKind) -> Result<PreShape> {
    let refs: Vec<&PreShape> = samples.iter().collect();
    check_samples(&refs)?;
    Ok(pick_init(&refs, None, kind).clone())
}

fn pick_init<'a>(samples: &[&'a PreShape], weights: Option<&[f64]>, kind: ShapeSpaceKind) -> &'a PreShape {
    init_candidates(samples, weights, kind)[0]
}

/// Candidates ordered by Fréchet function value (ties keep lexicographic
/// order).
fn init_candidates<'a>(
    samples: &[&'a PreShape],
    weights: Option<&[f64]>,
    kind: ShapeSpaceKind,
) -> Vec<&'a PreShape> {
    let mut sorted: Vec<&PreShape> = samples.to_vec();
    sorted.sort_by(|a, b| lex_cmp(a, b));
    sorted.dedup_by(|a, b| lex_cmp(a, b).is_eq());
    let n = sorted.len();
    let count = if n <= INIT_EXHAUSTIVE { n } else { INIT_CANDIDATES };
    let mut scored: Vec<(f64, &PreShape)> = (0..count)
        .map(|c| {
            let candidate = sorted[c * n / count];
            (alignment_pass(candidate, samples, weights, kind, false).value, candidate)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    scored.into_iter().map(|(_, c)| c).collect()
}

/// Sample Fréchet mean of `samples` in the quotient of the given kind.
///
/// Iteration also ends when the Fréchet function stops decreasing beyond
/// roundoff; the result then counts as converged if the residual is within
/// a factor 100 of `tol`. A result that hit `max_iter` (or stalled with a
/// larger residual) is returned with `converged = false`; use
/// [`MeanResult::require_converged`] to turn that into an error.
pub fn frechet_mean(samples: &[PreShape], kind: ShapeSpaceKind, opts: &MeanOptions) -> Result<MeanResult> {
    let refs: Vec<&PreShape> = samples.iter().collect();
    mean_impl(&refs, None, kind, opts)
}

/// Fréchet mean with nonnegative sample weights (e.g. bootstrap
/// multiplicities).
pub fn frechet_mean_weighted(
    samples: &[PreShape],
    weights: &[f64],
    kind: ShapeSpaceKind,
    opts: &MeanOptions,
) -> Result<MeanResult> {
    let refs: Vec<&PreShape> = samples.iter().collect();
    mean_impl(&refs, Some(weights), kind, opts)
}

pub(crate) fn mean_impl(
    samples: &[&PreShape],
    weights: Option<&[f64]>,
    kind: ShapeSpaceKind,
    opts: &MeanOptions,
) -> Result<MeanResult> {
    let (m, k) = check_samples(samples)?;
    if let Some(w) = weights {
        if w.len() != samples.len() {
            return Err(ShapeError::DimensionMismatch {
                expected: samples.len(),
                found: w.len(),
            });
        }
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(ShapeError::InvalidArgument(
                "weights must be nonnegative with positive sum".into(),
            ));
        }
    }
    if !(opts.tol > 0.0) {
        return Err(ShapeError::InvalidArgument("tolerance must be positive".into()));
    }
    match &opts.init {
        Some(p) => {
            if p.matrix().shape() != (m, k) {
                return Err(ShapeError::DimensionMismatch {
                    expected: m * k,
                    found: p.matrix().len(),
                });
            }
            Ok(descend(p.clone(), samples, weights, kind, opts))
        }
        None => {
            let mut best: Option<MeanResult> = None;
            for start in init_candidates(samples, weights, kind).into_iter().take(INIT_STARTS) {
                let res = descend(start.clone(), samples, weights, kind, opts);
                let better = match &best {
                    None => true,
                    Some(b) => (res.converged, -res.value) > (b.converged, -b.value),
                };
                if better {
                    best = Some(res);
                }
            }
            Ok(best.expect("nonempty sample"))
        }
    }
}

fn descend(
    mut mu: PreShape,
    samples: &[&PreShape],
    weights: Option<&[f64]>,
    kind: ShapeSpaceKind,
    opts: &MeanOptions,
) -> MeanResult {
    let mut pass = alignment_pass(&mu, samples, weights, kind, opts.parallel);
    let mut trace = vec![pass.value];
    let mut iterations = 0;
    let mut stalled = false;
    let mut flat = 0;
    let mut best_residual = pass.log_mean.norm();
    loop {
        let residual = pass.log_mean.norm();
        let plateau = flat >= PLATEAU_STEPS;
        if residual <= opts.tol || iterations >= opts.max_iter || stalled || plateau {
            return MeanResult {
                mean: mu,
                iterations,
                residual,
                value: pass.value,
                unique_alignments: pass.unique,
                converged: residual <= opts.tol
                    || ((plateau || stalled) && residual <= PLATEAU_SLACK * opts.tol),
                trace,
            };
        }
        iterations += 1;
        let step = TangentVector::from_raw(mu.clone(), pass.log_mean.clone());
        let margin = 1e-14 * pass.value.max(f64::MIN_POSITIVE);
        let mut factor = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = sphere_exp(&step.scaled(factor));
            let next = alignment_pass(&candidate, samples, weights, kind, opts.parallel);
            if next.value <= pass.value + margin {
                accepted = Some((candidate, next));
                break;
            }
            factor *= 0.5;
        }
        match accepted {
            Some((candidate, next)) => {
                let improved = pass.value - next.value > margin
                    || next.log_mean.norm() < 0.5 * best_residual;
                if improved {
                    flat = 0;
                } else {
                    flat += 1;
                }
                best_residual = best_residual.min(next.log_mean.norm());
                mu = candidate;
                pass = next;
                trace.push(pass.value);
            }
            None => stalled = true,
        }
    }
}

/// Fréchet mean of the concatenation `W ++ Z`.
pub fn pooled_mean(
    samples_w: &[PreShape],
    samples_z: &[PreShape],
    kind: ShapeSpaceKind,
    opts: &MeanOptions,
) -> Result<MeanResult> {
    let refs: Vec<&PreShape> = samples_w.iter().chain(samples_z).collect();
    mean_impl(&refs, None, kind, opts)
}
