use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::HorizontalBasis;
use super::hotelling::{column_mean, hotelling_t2, t2_cdf, t2_quantile, MAX_CONDITION};
use crate::error::{Result, ShapeError};
use crate::frechet::{mean_impl, MeanOptions, MeanResult};
use crate::geometry::{sphere_log, transport_raw, PreShape};
use crate::rng::stream_rng;
use crate::shape_spaces::{isotropy_check, optimal_lift, ShapeSpaceKind};

/// The four ways of lifting two samples into a common tangent space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestVariant {
    /// Both samples lifted to the pooled mean, tangent averages.
    PooledTangent,
    /// Both samples lifted to the pooled mean, group Fréchet means.
    PooledIntrinsic,
    /// Each sample lifted to its own mean, the means positioned to the
    /// pooled mean.
    Individual,
    /// Each sample lifted to its own mean, the second mean positioned to
    /// the first; no pooled mean.
    IndividualAsymmetric,
}

impl TestVariant {
    pub const ALL: [TestVariant; 4] = [
        TestVariant::PooledTangent,
        TestVariant::PooledIntrinsic,
        TestVariant::Individual,
        TestVariant::IndividualAsymmetric,
    ];

    fn needs_pooled_mean(self) -> bool {
        self != TestVariant::IndividualAsymmetric
    }

    fn intrinsic(self) -> bool {
        self != TestVariant::PooledTangent
    }
}

impl fmt::Display for TestVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestVariant::PooledTangent => "pooled_tangent",
            TestVariant::PooledIntrinsic => "pooled_intrinsic",
            TestVariant::Individual => "individual",
            TestVariant::IndividualAsymmetric => "individual_asymmetric",
        })
    }
}

impl FromStr for TestVariant {
    type Err = ShapeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "pooled_tangent" | "pooled" | "pooled_lifting" => Ok(TestVariant::PooledTangent),
            "pooled_intrinsic" => Ok(TestVariant::PooledIntrinsic),
            "individual" | "individual_lifting" => Ok(TestVariant::Individual),
            "individual_asymmetric" | "asymmetric" => Ok(TestVariant::IndividualAsymmetric),
            other => Err(ShapeError::InvalidArgument(format!(
                "unknown test variant '{other}' (expected pooled_tangent, pooled_intrinsic, \
                 individual or individual_asymmetric)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Critical value from Hotelling's `T^2` distribution.
    Quantile,
    /// Critical value from bootstrap resampling.
    Bootstrap,
}

#[derive(Clone, Debug, Serialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub critical_value: f64,
    pub p_value: Option<f64>,
    /// `statistic > critical_value`.
    pub reject: bool,
    /// `(d, n + m - 2)`.
    pub dof: (usize, usize),
    pub variant: TestVariant,
    pub calibration: Calibration,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resamples: Option<usize>,
    /// Some mean used by the test lies near the singular stratum; such runs
    /// are excluded from level accounting.
    pub singular_mean: bool,
    pub warnings: Vec<String>,
}

/// Options shared by all tests.
#[derive(Clone, Debug)]
pub struct TestOptions {
    pub alpha: f64,
    pub mean: MeanOptions,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            mean: MeanOptions::default(),
        }
    }
}

/// Group and pooled means of a two-sample problem.
pub(crate) struct Groups<'a> {
    kind: ShapeSpaceKind,
    samples: [&'a [PreShape]; 2],
    means: [MeanResult; 2],
    pooled: Option<MeanResult>,
    warnings: Vec<String>,
    singular: bool,
}

fn validate(w: &[PreShape], z: &[PreShape]) -> Result<()> {
    for s in [w, z] {
        if s.len() < 2 {
            return Err(ShapeError::TooFewPoints {
                needed: 2,
                found: s.len(),
            });
        }
    }
    let shape = w[0].matrix().shape();
    for s in w.iter().chain(z) {
        if s.matrix().shape() != shape {
            return Err(ShapeError::DimensionMismatch {
                expected: shape.0 * shape.1,
                found: s.matrix().len(),
            });
        }
    }
    Ok(())
}

impl<'a> Groups<'a> {
    pub(crate) fn new(
        w: &'a [PreShape],
        z: &'a [PreShape],
        kind: ShapeSpaceKind,
        need_pooled: bool,
        opts: &MeanOptions,
    ) -> Result<Self> {
        validate(w, z)?;
        let mean = |s: &[PreShape]| {
            let refs: Vec<&PreShape> = s.iter().collect();
            mean_impl(&refs, None, kind, opts)?.require_converged()
        };
        let means = [mean(w)?, mean(z)?];
        let pooled = if need_pooled {
            let refs: Vec<&PreShape> = w.iter().chain(z).collect();
            Some(mean_impl(&refs, None, kind, opts)?.require_converged()?)
        } else {
            None
        };
        let mut warnings = Vec::new();
        let mut singular = false;
        for (name, m) in [("first sample", &means[0]), ("second sample", &means[1])]
            .into_iter()
            .chain(pooled.as_ref().map(|p| ("pooled", p)))
        {
            if !isotropy_check(&m.mean, kind) {
                singular = true;
                warnings.push(format!("{name} mean lies near the singular stratum"));
            }
            if m.unique_alignments < 1.0 {
                let count = ((1.0 - m.unique_alignments) * if name == "pooled" {
                    (w.len() + z.len()) as f64
                } else if name == "first sample" {
                    w.len() as f64
                } else {
                    z.len() as f64
                })
                .round();
                warnings.push(format!("{count} non-unique alignments at the {name} mean"));
            }
        }
        Ok(Self {
            kind,
            samples: [w, z],
            means,
            pooled,
            warnings,
            singular,
        })
    }
}

/// One group's chart: samples are lifted to `center`, and their logarithms
/// (transported to the frame base when `center` differs from it) are
/// expanded in the frame basis and shifted by `offset`.
struct Chart {
    center: PreShape,
    offset: DVector<f64>,
    transported: bool,
}

/// Common coordinate frame of one test variant.
pub(crate) struct Frame {
    kind: ShapeSpaceKind,
    basis: HorizontalBasis,
    charts: [Chart; 2],
    non_unique: usize,
}

impl Frame {
    pub(crate) fn new(groups: &Groups<'_>, variant: TestVariant) -> Result<Self> {
        let kind = groups.kind;
        let base = match variant {
            TestVariant::IndividualAsymmetric => groups.means[0].mean.clone(),
            _ => groups.pooled.as_ref().expect("pooled mean computed").mean.clone(),
        };
        let basis = HorizontalBasis::new(&base, kind)?;
        let zero = DVector::zeros(basis.dim());
        let mut non_unique = 0;
        let mut positioned = |g: usize| -> Result<Chart> {
            let lift = optimal_lift(&base, &groups.means[g].mean, kind);
            if !lift.unique {
                non_unique += 1;
            }
            let log = sphere_log(&base, &lift.aligned)?;
            Ok(Chart {
                center: lift.aligned,
                offset: basis.coords_of(log.matrix().as_slice()),
                transported: true,
            })
        };
        let at_base = || Chart {
            center: base.clone(),
            offset: zero.clone(),
            transported: false,
        };
        let charts = match variant {
            TestVariant::PooledTangent | TestVariant::PooledIntrinsic => [at_base(), at_base()],
            TestVariant::Individual => [positioned(0)?, positioned(1)?],
            TestVariant::IndividualAsymmetric => [at_base(), positioned(1)?],
        };
        Ok(Self {
            kind,
            basis,
            charts,
            non_unique,
        })
    }

    pub(crate) fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Coordinates of `q` in the chart of group `g`, and whether its lift
    /// was unique.
    pub(crate) fn coords(&self, g: usize, q: &PreShape) -> Result<(DVector<f64>, bool)> {
        let chart = &self.charts[g];
        let lift = optimal_lift(&chart.center, q, self.kind);
        let log = sphere_log(&chart.center, &lift.aligned)?.into_matrix();
        let v = if chart.transported {
            transport_raw(chart.center.matrix(), self.basis.base().matrix(), &log)?
        } else {
            log
        };
        Ok((self.basis.coords_of(v.as_slice()) + &chart.offset, lift.unique))
    }

    /// Rows of coordinates for every sample of group `g`.
    fn sample_coords(&self, g: usize, samples: &[PreShape]) -> Result<(DMatrix<f64>, usize)> {
        let mut out = DMatrix::zeros(samples.len(), self.dim());
        let mut non_unique = 0;
        for (j, s) in samples.iter().enumerate() {
            let (c, unique) = self.coords(g, s)?;
            if !unique {
                non_unique += 1;
            }
            out.row_mut(j).copy_from(&c.transpose());
        }
        Ok((out, non_unique))
    }
}

/// Coordinates and mean vectors of both samples in one variant's frame.
pub(crate) struct Lifted {
    pub frame: Frame,
    pub coords: [DMatrix<f64>; 2],
    pub means: [DVector<f64>; 2],
    pub warnings: Vec<String>,
}

impl Lifted {
    pub(crate) fn new(groups: &Groups<'_>, variant: TestVariant) -> Result<Self> {
        let frame = Frame::new(groups, variant)?;
        let mut warnings = Vec::new();
        if frame.non_unique > 0 {
            warnings.push(format!(
                "{} group means not uniquely positioned",
                frame.non_unique
            ));
        }
        let (x, nx) = frame.sample_coords(0, groups.samples[0])?;
        let (y, ny) = frame.sample_coords(1, groups.samples[1])?;
        if nx + ny > 0 {
            warnings.push(format!("{} samples with non-unique optimal lift", nx + ny));
        }
        let means = if variant.intrinsic() {
            [
                frame.coords(0, &groups.means[0].mean)?.0,
                frame.coords(1, &groups.means[1].mean)?.0,
            ]
        } else {
            [column_mean(&x), column_mean(&y)]
        };
        Ok(Self {
            frame,
            coords: [x, y],
            means,
            warnings,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ShapeError::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Quantile-calibrated two-sample test of the given variant.
pub fn quantile_test(
    w: &[PreShape],
    z: &[PreShape],
    kind: ShapeSpaceKind,
    variant: TestVariant,
    opts: &TestOptions,
) -> Result<TestOutcome> {
    check_alpha(opts.alpha)?;
    let groups = Groups::new(w, z, kind, variant.needs_pooled_mean(), &opts.mean)?;
    let lifted = Lifted::new(&groups, variant)?;
    let d = lifted.frame.dim();
    let k = w.len() + z.len() - 2;
    let statistic = hotelling_t2(
        &lifted.coords[0],
        &lifted.coords[1],
        Some((&lifted.means[0], &lifted.means[1])),
    )?;
    let critical_value = t2_quantile(d, k, 1.0 - opts.alpha)?;
    let p_value = 1.0 - t2_cdf(statistic, d, k)?;
    let mut warnings = groups.warnings;
    warnings.extend(lifted.warnings);
    Ok(TestOutcome {
        statistic,
        critical_value,
        p_value: Some(p_value),
        reject: statistic > critical_value,
        dof: (d, k),
        variant,
        calibration: Calibration::Quantile,
        resamples: None,
        singular_mean: groups.singular,
        warnings,
    })
}

fn with_alpha(alpha: f64) -> TestOptions {
    TestOptions {
        alpha,
        ..Default::default()
    }
}

/// Both samples lifted to the pooled mean; tangent averages and covariances.
pub fn test_pooled_lifting(w: &[PreShape], z: &[PreShape], kind: ShapeSpaceKind, alpha: f64) -> Result<TestOutcome> {
    quantile_test(w, z, kind, TestVariant::PooledTangent, &with_alpha(alpha))
}

/// Both samples lifted to the pooled mean; group Fréchet means as centers.
pub fn test_pooled_intrinsic(w: &[PreShape], z: &[PreShape], kind: ShapeSpaceKind, alpha: f64) -> Result<TestOutcome> {
    quantile_test(w, z, kind, TestVariant::PooledIntrinsic, &with_alpha(alpha))
}

/// Each sample lifted to its own mean, both means positioned to the pooled
/// mean.
pub fn test_individual_lifting(w: &[PreShape], z: &[PreShape], kind: ShapeSpaceKind, alpha: f64) -> Result<TestOutcome> {
    quantile_test(w, z, kind, TestVariant::Individual, &with_alpha(alpha))
}

/// Each sample lifted to its own mean, the second mean positioned to the
/// first.
pub fn test_individual_asymmetric(
    w: &[PreShape],
    z: &[PreShape],
    kind: ShapeSpaceKind,
    alpha: f64,
) -> Result<TestOutcome> {
    quantile_test(w, z, kind, TestVariant::IndividualAsymmetric, &with_alpha(alpha))
}

/// Options for [`bootstrap_tests`].
#[derive(Clone, Debug)]
pub struct BootstrapOptions {
    pub alpha: f64,
    /// Number `B` of second-round resamples.
    pub resamples: usize,
    pub seed: u64,
    pub mean: MeanOptions,
    /// Residual tolerance for the resample means. The group means use
    /// `mean.tol`; resample means only feed the null distribution, whose
    /// spread is orders of magnitude above this.
    pub resample_tol: f64,
    /// Compute resample means in parallel; results are identical either way.
    pub parallel: bool,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            resamples: 1000,
            seed: 0,
            mean: MeanOptions::default(),
            resample_tol: DEFAULT_RESAMPLE_TOL,
            parallel: false,
        }
    }
}

pub const DEFAULT_RESAMPLE_TOL: f64 = 1e-7;
pub const MIN_RESAMPLES: usize = 200;

/// Multiplicities of a with-replacement resample of size `n`.
fn resample_counts<R: Rng>(rng: &mut R, n: usize) -> Vec<u32> {
    let mut counts = vec![0; n];
    for _ in 0..n {
        counts[rng.random_range(0..n)] += 1;
    }
    counts
}

/// One resample of one group: multiplicities and, when needed, its mean.
struct Resample {
    counts: Vec<u32>,
    mean: Option<PreShape>,
    converged: bool,
}

fn draw_resample(
    groups: &Groups<'_>,
    g: usize,
    round: usize,
    opts: &BootstrapOptions,
    need_mean: bool,
) -> Result<Resample> {
    let samples = groups.samples[g];
    let mut rng = stream_rng(opts.seed, 2 * round as u64 + g as u64);
    let counts = resample_counts(&mut rng, samples.len());
    if !need_mean {
        return Ok(Resample {
            counts,
            mean: None,
            converged: true,
        });
    }
    let (refs, weights): (Vec<&PreShape>, Vec<f64>) = samples
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(s, &c)| (s, f64::from(c)))
        .unzip();
    let mean_opts = MeanOptions {
        init: Some(groups.means[g].mean.clone()),
        tol: opts.resample_tol,
        parallel: false,
        ..opts.mean.clone()
    };
    let res = mean_impl(&refs, Some(&weights), groups.kind, &mean_opts)?;
    Ok(Resample {
        counts,
        converged: res.converged,
        mean: Some(res.mean),
    })
}

/// Positive definite quadratic form `v -> v^T C^{-1} v`.
struct InverseForm {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl InverseForm {
    fn new(cov: DMatrix<f64>) -> Result<Self> {
        let eig = cov.clone().symmetric_eigen();
        let (max, min) = (eig.eigenvalues.max(), eig.eigenvalues.min());
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(ShapeError::SingularCovariance { condition });
        }
        let chol = cov.cholesky().ok_or(ShapeError::SingularCovariance { condition })?;
        Ok(Self { chol })
    }

    fn eval(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.chol.solve(v))
    }
}

/// `(1/n) sum_j c_j (x_j - center)(x_j - center)^T` with multiplicities `c`.
fn weighted_covariance(x: &DMatrix<f64>, counts: &[u32], center: &DVector<f64>) -> DMatrix<f64> {
    let d = x.ncols();
    let mut cov = DMatrix::zeros(d, d);
    let mut total = 0.0;
    for (j, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let r = x.row(j).transpose() - center;
        cov.ger(f64::from(c), &r, &r, 1.0);
        total += f64::from(c);
    }
    cov / total
}

fn weighted_row_mean(x: &DMatrix<f64>, counts: &[u32]) -> DVector<f64> {
    let mut acc = DVector::zeros(x.ncols());
    let mut total = 0.0;
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            acc += x.row(j).transpose() * f64::from(c);
            total += f64::from(c);
        }
    }
    acc / total
}

/// Bootstrap-calibrated tests for several variants at once. The resamples
/// (and their Fréchet means) depend only on the data and `opts.seed`, so
/// they are drawn once and shared by all requested variants.
///
/// Round 0 draws one resample per group; the intrinsic covariances of those
/// resamples add up to `C`. Rounds `1..=B` give mean deviations
/// `d_b = mean* - mean` per group, and the statistics
/// `(d_b^X - d_b^Y)^T C^{-1} (d_b^X - d_b^Y)`; their `ceil((1 - alpha) B)`-th
/// order statistic is the critical value for the observed
/// `(xbar - ybar)^T C^{-1} (xbar - ybar)`.
pub fn bootstrap_tests(
    w: &[PreShape],
    z: &[PreShape],
    kind: ShapeSpaceKind,
    variants: &[TestVariant],
    opts: &BootstrapOptions,
) -> Result<Vec<TestOutcome>> {
    check_alpha(opts.alpha)?;
    if opts.resamples < MIN_RESAMPLES {
        return Err(ShapeError::InvalidArgument(format!(
            "at least {MIN_RESAMPLES} bootstrap resamples are required, got {}",
            opts.resamples
        )));
    }
    let need_pooled = variants.iter().any(|v| v.needs_pooled_mean());
    let need_means = variants.iter().any(|v| v.intrinsic());
    let groups = Groups::new(w, z, kind, need_pooled, &opts.mean)?;
    let lifted = variants
        .iter()
        .map(|&v| Lifted::new(&groups, v))
        .collect::<Result<Vec<_>>>()?;

    let draw = |round: usize| -> Result<[Resample; 2]> {
        Ok([
            draw_resample(&groups, 0, round, opts, need_means)?,
            draw_resample(&groups, 1, round, opts, need_means)?,
        ])
    };
    let rounds: Vec<[Resample; 2]> = if opts.parallel {
        (0..=opts.resamples).into_par_iter().map(draw).collect::<Result<_>>()?
    } else {
        (0..=opts.resamples).map(draw).collect::<Result<_>>()?
    };
    let unconverged = rounds
        .iter()
        .flatten()
        .filter(|r| !r.converged)
        .count();

    let b = opts.resamples;
    let index = (((1.0 - opts.alpha) * b as f64) - 1e-9).ceil().clamp(1.0, b as f64) as usize;
    let mut outcomes = Vec::with_capacity(variants.len());
    for (&variant, lifted) in variants.iter().zip(&lifted) {
        let center = |g: usize, r: &Resample| -> Result<DVector<f64>> {
            match (&r.mean, variant.intrinsic()) {
                (Some(mean), true) => Ok(lifted.frame.coords(g, mean)?.0),
                _ => Ok(weighted_row_mean(&lifted.coords[g], &r.counts)),
            }
        };
        let first = &rounds[0];
        let mut c = DMatrix::zeros(lifted.frame.dim(), lifted.frame.dim());
        for g in 0..2 {
            c += weighted_covariance(&lifted.coords[g], &first[g].counts, &center(g, &first[g])?);
        }
        let form = InverseForm::new(c)?;
        let statistic = form.eval(&(&lifted.means[0] - &lifted.means[1]));
        let mut stats = Vec::with_capacity(b);
        for round in &rounds[1..] {
            let dx = center(0, &round[0])? - &lifted.means[0];
            let dy = center(1, &round[1])? - &lifted.means[1];
            stats.push(form.eval(&(dx - dy)));
        }
        let exceed = stats.iter().filter(|&&s| s >= statistic).count();
        stats.sort_by(f64::total_cmp);
        let critical_value = stats[index - 1];
        let mut warnings = groups.warnings.clone();
        warnings.extend(lifted.warnings.iter().cloned());
        if b < 1000 {
            warnings.push(format!("only {b} bootstrap resamples; 1000 or more recommended"));
        }
        if unconverged > 0 {
            warnings.push(format!("{unconverged} resample means did not reach tolerance"));
        }
        outcomes.push(TestOutcome {
            statistic,
            critical_value,
            p_value: Some(exceed as f64 / b as f64),
            reject: statistic > critical_value,
            dof: (lifted.frame.dim(), w.len() + z.len() - 2),
            variant,
            calibration: Calibration::Bootstrap,
            resamples: Some(b),
            singular_mean: groups.singular,
            warnings,
        });
    }
    Ok(outcomes)
}

/// Bootstrap-calibrated test of one variant.
pub fn bootstrap_test(
    w: &[PreShape],
    z: &[PreShape],
    kind: ShapeSpaceKind,
    alpha: f64,
    resamples: usize,
    variant: TestVariant,
    seed: u64,
) -> Result<TestOutcome> {
    let opts = BootstrapOptions {
        alpha,
        resamples,
        seed,
        ..Default::default()
    };
    Ok(bootstrap_tests(w, z, kind, &[variant], &opts)?.remove(0))
}
