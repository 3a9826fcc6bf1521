//! Level and power studies for the two-sample tests.
//!
//! Samples are templates plus independent isotropic Gaussian noise on every
//! landmark. The second template of each study point sits at a prescribed
//! shape distance from the first. Replicate `r` of size pair `s` draws its
//! data and bootstrap resamples from seeds derived only from
//! `(seed, s, r)`, so results do not depend on thread count or scheduling,
//! and every separation of a power curve sees the same noise.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapeError};
use crate::geometry::{centroid, sphere_exp, sphere_log, to_preshape, Configuration, TangentVector};
use crate::inference::{bootstrap_tests, quantile_test, BootstrapOptions, HorizontalBasis, TestOptions, TestVariant};
use crate::rng::{child_seed, stream_rng};
use crate::shape_spaces::{optimal_lift, shape_distance, ShapeSpaceKind};

/// `n` noisy copies of `template`, every coordinate perturbed by
/// `N(0, sd^2)`.
pub fn generate_sample<R: Rng + ?Sized>(
    template: &Configuration,
    sd: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Configuration>> {
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(ShapeError::InvalidArgument(format!(
            "noise standard deviation must be nonnegative, got {sd}"
        )));
    }
    let (m, k) = template.matrix().shape();
    (0..n)
        .map(|_| {
            let noise = DMatrix::from_fn(m, k, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
            Configuration::new(template.matrix() + noise)
        })
        .collect()
}

/// Default first template: a shallow, lopsided arc of five landmarks,
/// about 2.6 units across so that landmark noise of 0.2 matters. Its
/// reflected and reversed copies are all at least 0.67 away (in the
/// rotation quotient), which keeps the noisy samples clear of the
/// reflection/relabeling fixed points.
pub fn default_template_a() -> Configuration {
    Configuration::from_landmarks(&[
        vec![0.0, 0.0],
        vec![1.0, 0.3],
        vec![1.8, 0.9],
        vec![2.4, 1.2],
        vec![2.6, 0.0],
    ])
    .expect("valid template")
}

/// Default second template: a deeper buckle with the same lopsidedness.
pub fn default_template_b() -> Configuration {
    Configuration::from_landmarks(&[
        vec![0.0, 0.0],
        vec![0.9, 0.5],
        vec![1.7, 1.3],
        vec![2.3, 1.8],
        vec![2.6, 0.0],
    ])
    .expect("valid template")
}

fn size_of(c: &Configuration) -> f64 {
    let mid = centroid(c);
    let mut centered = c.matrix().clone();
    for (r, mu) in mid.iter().enumerate() {
        centered.row_mut(r).add_scalar_mut(-mu);
    }
    centered.norm()
}

/// Moves along `direction` (a unit horizontal tangent vector at the
/// pre-shape of `base`) until the quotient distance equals `target`.
fn separate_along(
    base: &Configuration,
    direction: &TangentVector,
    target: f64,
    kind: ShapeSpaceKind,
) -> Result<(Configuration, Configuration)> {
    if !(target >= 0.0) {
        return Err(ShapeError::InvalidArgument(format!(
            "target distance must be nonnegative, got {target}"
        )));
    }
    if target == 0.0 {
        return Ok((base.clone(), base.clone()));
    }
    let p = direction.base();
    let at = |t: f64| sphere_exp(&direction.scaled(t));
    let dist = |t: f64| shape_distance(p, &at(t), kind);
    // Scan for the first parameter reaching the target, then bisect.
    const STEPS: usize = 2000;
    let t_max = std::f64::consts::PI;
    let mut lo = 0.0;
    let mut hi = None;
    let mut reachable: f64 = 0.0;
    for i in 1..=STEPS {
        let t = t_max * i as f64 / STEPS as f64;
        let d = dist(t);
        reachable = reachable.max(d);
        if d >= target {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    let mut hi = hi.ok_or(ShapeError::UnreachableDistance { target, reachable })?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dist(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let q = at(hi);
    let second = q.to_configuration_with(size_of(base), &centroid(base));
    Ok((base.clone(), second))
}

/// Two templates at quotient distance `target` (to `1e-6`): `base` and
/// `base` moved along its first horizontal basis direction. The moved copy
/// keeps the size and centroid of `base`.
pub fn make_separated_templates(
    base: &Configuration,
    target_distance: f64,
    kind: ShapeSpaceKind,
) -> Result<(Configuration, Configuration)> {
    let p = to_preshape(base)?;
    let basis = HorizontalBasis::new(&p, kind)?;
    let direction = basis.vectors().swap_remove(0);
    separate_along(base, &direction, target_distance, kind)
}

/// Like [`make_separated_templates`], moving along the minimizing geodesic
/// from `base` toward the shape of `toward`.
pub fn make_separated_templates_toward(
    base: &Configuration,
    toward: &Configuration,
    target_distance: f64,
    kind: ShapeSpaceKind,
) -> Result<(Configuration, Configuration)> {
    let p = to_preshape(base)?;
    let q = optimal_lift(&p, &to_preshape(toward)?, kind).aligned;
    let log = sphere_log(&p, &q)?;
    let norm = log.norm();
    if norm < 1e-12 {
        return Err(ShapeError::InvalidArgument(
            "templates have the same shape; no direction to move along".into(),
        ));
    }
    separate_along(base, &log.scaled(1.0 / norm), target_distance, kind)
}

fn default_sizes() -> Vec<(usize, usize)> {
    vec![(100, 100)]
}
fn default_replicates() -> usize {
    1000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_b() -> usize {
    1000
}
fn default_grid() -> Vec<f64> {
    vec![0.0, 0.06]
}
fn default_variants() -> Vec<TestVariant> {
    TestVariant::ALL.to_vec()
}
fn default_sd() -> f64 {
    0.2
}

/// On-disk form of [`StudyConfig`]; templates are landmark lists.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyConfigFile {
    #[serde(default)]
    template_a: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    template_b: Option<Vec<Vec<f64>>>,
    kind: ShapeSpaceKind,
    #[serde(default = "default_sd")]
    noise_sd: f64,
    #[serde(default = "default_sizes")]
    sizes: Vec<(usize, usize)>,
    #[serde(default = "default_replicates")]
    replicates: usize,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default = "default_b")]
    bootstrap_b: usize,
    #[serde(default = "default_grid")]
    separation_grid: Vec<f64>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_variants")]
    variants: Vec<TestVariant>,
    #[serde(default)]
    quantile: bool,
}

/// Parameters of a level/power study.
#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub template_a: Configuration,
    /// Direction of separation: the second template moves from `template_a`
    /// toward this shape. Without it, the first horizontal basis direction
    /// at `template_a` is used.
    pub template_b: Option<Configuration>,
    pub kind: ShapeSpaceKind,
    pub noise_sd: f64,
    pub sizes: Vec<(usize, usize)>,
    pub replicates: usize,
    pub alpha: f64,
    pub bootstrap_b: usize,
    /// Shape distances between the two templates.
    pub separation_grid: Vec<f64>,
    pub seed: u64,
    pub variants: Vec<TestVariant>,
    /// Also run the quantile-calibrated versions.
    pub quantile: bool,
}

impl StudyConfig {
    /// Study with the default templates and the given kind.
    pub fn new(kind: ShapeSpaceKind) -> Self {
        Self {
            template_a: default_template_a(),
            template_b: Some(default_template_b()),
            kind,
            noise_sd: default_sd(),
            sizes: default_sizes(),
            replicates: default_replicates(),
            alpha: default_alpha(),
            bootstrap_b: default_b(),
            separation_grid: default_grid(),
            seed: 0,
            variants: default_variants(),
            quantile: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ShapeError::InvalidArgument(msg));
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be positive, got {}", self.noise_sd));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.separation_grid.iter().any(|s| !(*s >= 0.0)) {
            return bad("separations must be nonnegative".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.sizes.iter().any(|&(n, m)| n < 2 || m < 2) {
            return bad("group sizes must be at least 2".into());
        }
        if self.variants.is_empty() {
            return bad("no test variants selected".into());
        }
        if let Some(b) = &self.template_b {
            if b.matrix().shape() != self.template_a.matrix().shape() {
                return Err(ShapeError::DimensionMismatch {
                    expected: self.template_a.matrix().len(),
                    found: b.matrix().len(),
                });
            }
        }
        Ok(())
    }

    fn from_file_form(raw: StudyConfigFile) -> Result<Self> {
        let template = |t: Option<Vec<Vec<f64>>>| t.map(|l| Configuration::from_landmarks(&l)).transpose();
        let template_a = template(raw.template_a)?;
        let template_b = match (&template_a, raw.template_b) {
            // Default direction only goes with the default base.
            (None, None) => Some(default_template_b()),
            (_, b) => template(b)?,
        };
        let cfg = Self {
            template_a: template_a.unwrap_or_else(default_template_a),
            template_b,
            kind: raw.kind,
            noise_sd: raw.noise_sd,
            sizes: raw.sizes,
            replicates: raw.replicates,
            alpha: raw.alpha,
            bootstrap_b: raw.bootstrap_b,
            separation_grid: raw.separation_grid,
            seed: raw.seed,
            variants: raw.variants,
            quantile: raw.quantile,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a JSON file, or TOML when the extension is `.toml`.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ShapeError::io(path, e))?;
        let err = |message: String| ShapeError::Format {
            path: path.to_path_buf(),
            message,
        };
        let raw: StudyConfigFile = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
            toml::from_str(&text).map_err(|e| err(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| err(e.to_string()))?
        };
        Self::from_file_form(raw).map_err(|e| match e {
            ShapeError::InvalidArgument(m) => err(m),
            other => err(other.to_string()),
        })
    }
}

/// Tally for one (variant, calibration, size pair, separation).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyRow {
    pub variant: TestVariant,
    /// `"bootstrap"` or `"quantile"`.
    pub calibration: &'static str,
    pub n: usize,
    pub m: usize,
    pub separation: f64,
    pub rejections: usize,
    /// Replicates that produced a decision.
    pub replicates: usize,
    /// Replicates whose computation failed (e.g. singular covariance).
    pub failures: usize,
    /// Replicates with a mean near the singular stratum; not counted.
    pub excluded: usize,
    pub rate: f64,
    /// Mean wall-clock seconds per replicate (all variants together).
    #[serde(skip)]
    pub mean_runtime: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
}

impl StudyResult {
    pub fn row(&self, variant: TestVariant, calibration: &str, n: usize, m: usize, separation: f64) -> Option<&StudyRow> {
        self.rows.iter().find(|r| {
            r.variant == variant && r.calibration == calibration && r.n == n && r.m == m && r.separation == separation
        })
    }
}

/// Decisions of one replicate: per (calibration, variant), `Some(reject)`,
/// or `None` when excluded; `Err` when the replicate failed.
type ReplicateOutcome = std::result::Result<Vec<Option<bool>>, ()>;

fn run_replicate(
    cfg: &StudyConfig,
    first: &Configuration,
    second: &Configuration,
    n: usize,
    m: usize,
    seed: u64,
) -> ReplicateOutcome {
    let project = |c: Vec<Configuration>| c.iter().map(to_preshape).collect::<Result<Vec<_>>>();
    let w = generate_sample(first, cfg.noise_sd, n, &mut stream_rng(seed, 0))
        .and_then(project)
        .map_err(|_| ())?;
    let z = generate_sample(second, cfg.noise_sd, m, &mut stream_rng(seed, 1))
        .and_then(project)
        .map_err(|_| ())?;
    let mut decisions = Vec::new();
    let opts = BootstrapOptions {
        alpha: cfg.alpha,
        resamples: cfg.bootstrap_b,
        seed: child_seed(seed, 2),
        ..BootstrapOptions::default()
    };
    let outs = bootstrap_tests(&w, &z, cfg.kind, &cfg.variants, &opts).map_err(|_| ())?;
    decisions.extend(outs.iter().map(|o| (!o.singular_mean).then_some(o.reject)));
    if cfg.quantile {
        let topts = TestOptions {
            alpha: cfg.alpha,
            ..Default::default()
        };
        for &v in &cfg.variants {
            let o = quantile_test(&w, &z, cfg.kind, v, &topts).map_err(|_| ())?;
            decisions.push((!o.singular_mean).then_some(o.reject));
        }
    }
    Ok(decisions)
}

/// Runs every (size pair, separation) point of the study. Replicates run
/// on the current rayon pool; the tally is exact and order-independent.
pub fn run_level_power_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let mut pairs = Vec::new();
    for &sep in &cfg.separation_grid {
        let pair = match &cfg.template_b {
            Some(b) => make_separated_templates_toward(&cfg.template_a, b, sep, cfg.kind)?,
            None => make_separated_templates(&cfg.template_a, sep, cfg.kind)?,
        };
        pairs.push((sep, pair));
    }
    let mut labels: Vec<(&'static str, TestVariant)> = cfg.variants.iter().map(|&v| ("bootstrap", v)).collect();
    if cfg.quantile {
        labels.extend(cfg.variants.iter().map(|&v| ("quantile", v)));
    }
    let mut rows = Vec::new();
    for (size_index, &(n, m)) in cfg.sizes.iter().enumerate() {
        let size_seed = child_seed(cfg.seed, size_index as u64);
        for (sep, (first, second)) in &pairs {
            let start = Instant::now();
            let outcomes: Vec<ReplicateOutcome> = (0..cfg.replicates)
                .into_par_iter()
                .map(|r| run_replicate(cfg, first, second, n, m, child_seed(size_seed, r as u64)))
                .collect();
            let runtime = start.elapsed().as_secs_f64() / cfg.replicates as f64;
            for (slot, &(calibration, variant)) in labels.iter().enumerate() {
                let mut row = StudyRow {
                    variant,
                    calibration,
                    n,
                    m,
                    separation: *sep,
                    rejections: 0,
                    replicates: 0,
                    failures: 0,
                    excluded: 0,
                    rate: 0.0,
                    mean_runtime: runtime,
                };
                for outcome in &outcomes {
                    match outcome {
                        Err(()) => row.failures += 1,
                        Ok(d) => match d[slot] {
                            None => row.excluded += 1,
                            Some(reject) => {
                                row.replicates += 1;
                                row.rejections += usize::from(reject);
                            }
                        },
                    }
                }
                if row.replicates > 0 {
                    row.rate = row.rejections as f64 / row.replicates as f64;
                }
                rows.push(row);
            }
        }
    }
    Ok(StudyResult { rows })
}

/// CSV text of the per-point tally.
pub fn table_csv(result: &StudyResult) -> String {
    let mut out = String::from("variant,calibration,n,m,separation,rejections,replicates,failures,excluded,rate\n");
    for r in &result.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.variant, r.calibration, r.n, r.m, r.separation, r.rejections, r.replicates, r.failures, r.excluded, r.rate
        );
    }
    out
}

/// Wide CSV for plotting: one row per separation, one rejection-rate column
/// per (variant, calibration, sizes).
pub fn power_curve_csv(result: &StudyResult) -> String {
    let mut columns: Vec<String> = Vec::new();
    let mut by_sep: BTreeMap<u64, (f64, BTreeMap<String, f64>)> = BTreeMap::new();
    for r in &result.rows {
        let col = format!("{}_{}_n{}_m{}", r.variant, r.calibration, r.n, r.m);
        if !columns.contains(&col) {
            columns.push(col.clone());
        }
        by_sep
            .entry(r.separation.to_bits())
            .or_insert_with(|| (r.separation, BTreeMap::new()))
            .1
            .insert(col, r.rate);
    }
    let mut seps: Vec<&(f64, BTreeMap<String, f64>)> = by_sep.values().collect();
    seps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = String::from("separation");
    for c in &columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (sep, rates) in seps {
        out.push_str(&sep.to_string());
        for c in &columns {
            out.push(',');
            if let Some(v) = rates.get(c) {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| ShapeError::io(path, e))
}

pub fn emit_table(result: &StudyResult, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &table_csv(result))
}

pub fn emit_power_curve(result: &StudyResult, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &power_curve_csv(result))
}
