//! Five landmarks on traced filament buckles.
//!
//! Landmarks 1 and 5 are the pair of vertices maximizing
//! `(chord / arc length) * h^(1/4)`, with `h` the largest distance of an
//! interior vertex from the chord; that vertex is landmark 3. Landmark 2 is
//! the vertex between 1 and 3 furthest from the line through 1 and 3, and
//! landmark 4 the vertex between 3 and 5 furthest from the line through 3
//! and 5. Finally landmarks 2–4 are shifted along the curve, within a budget,
//! towards equal arc-length spacing.
//!
//! The rules are stated symmetrically, so reversing the curve reverses the
//! landmark sequence (up to exact score ties).

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapeError};
use crate::geometry::Configuration;
use crate::io::{csv_rows, fmt_row, format_err, is_json, looks_like_header, read_text, write_text};

pub const MIN_POINTS: usize = 5;
/// `place_landmarks` needs at least this many (resampled) vertices.
pub const MIN_LANDMARK_POINTS: usize = 20;
pub const DEFAULT_RESOLUTION: usize = 200;
pub const DEFAULT_MAX_SHIFT: f64 = 0.15;

/// Relative size below which a chord or a bend counts as absent.
const DEGENERATE_TOL: f64 = 1e-9;

/// Planar polyline with cumulative arc length per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    points: Vec<[f64; 2]>,
    arc: Vec<f64>,
}

impl Polyline {
    /// Needs at least five finite points, consecutive points distinct.
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < MIN_POINTS {
            return Err(ShapeError::TooFewPoints {
                needed: MIN_POINTS,
                found: points.len(),
            });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ShapeError::InvalidArgument("polyline has non-finite coordinates".into()));
        }
        let mut arc = Vec::with_capacity(points.len());
        arc.push(0.0);
        for (i, w) in points.windows(2).enumerate() {
            let seg = dist(w[0], w[1]);
            if seg == 0.0 {
                return Err(ShapeError::InvalidArgument(format!(
                    "polyline points {i} and {} coincide",
                    i + 1
                )));
            }
            arc.push(arc[i] + seg);
        }
        Ok(Self { points, arc })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Cumulative arc length; `arc_lengths()[0] == 0`.
    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().expect("nonempty")
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self::new(points).expect("reversal keeps validity")
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Distance of `v` from the line through `a` and `b` (`a != b`).
fn line_distance(a: [f64; 2], b: [f64; 2], v: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    ((v[1] - a[1]) * dx - (v[0] - a[0]) * dy).abs() / dx.hypot(dy)
}

/// Uniform resampling by arc length with linear interpolation. The number
/// of segments is the smallest one whose spacing does not exceed `step`;
/// endpoints are kept exactly.
pub fn resample(p: &Polyline, step: f64) -> Result<Polyline> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(ShapeError::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let length = p.length();
    let ratio = length / step;
    let segments = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
        ratio.round()
    } else {
        ratio.ceil()
    }
    .max(1.0) as usize;
    let mut points = Vec::with_capacity(segments + 1);
    points.push(p.points[0]);
    let mut seg = 0;
    for t in 1..segments {
        let target = length * t as f64 / segments as f64;
        while seg + 2 < p.arc.len() && p.arc[seg + 1] < target {
            seg += 1;
        }
        let (a, b) = (p.points[seg], p.points[seg + 1]);
        let u = ((target - p.arc[seg]) / (p.arc[seg + 1] - p.arc[seg])).clamp(0.0, 1.0);
        points.push([a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]);
    }
    points.push(*p.points.last().expect("nonempty"));
    Polyline::new(points)
}

/// Landmark indices into a (resampled) polyline with their coordinates.
#[derive(Clone, Debug)]
pub struct LandmarkSet {
    pub indices: [usize; 5],
    pub configuration: Configuration,
    /// Arc-length positions of the five landmarks.
    pub positions: [f64; 5],
    /// Score of the selected end pair.
    pub score: f64,
    /// Distance of landmark 3 from the chord between landmarks 1 and 5.
    pub bend: f64,
    /// Signed arc-length moves of landmarks 2, 3, 4 by [`equalize`].
    pub shifts: [f64; 3],
}

impl LandmarkSet {
    fn from_indices(p: &Polyline, indices: [usize; 5], score: f64, bend: f64) -> Self {
        let landmarks: Vec<Vec<f64>> = indices.iter().map(|&i| p.points[i].to_vec()).collect();
        Self {
            indices,
            configuration: Configuration::from_landmarks(&landmarks).expect("distinct vertices"),
            positions: indices.map(|i| p.arc[i]),
            score,
            bend,
            shifts: [0.0; 3],
        }
    }

    /// Squared deviation of the four gaps from a quarter of the span.
    pub fn spacing_objective(&self) -> f64 {
        spacing_objective(&self.positions)
    }
}

fn spacing_objective(s: &[f64; 5]) -> f64 {
    let quarter = 0.25 * (s[4] - s[0]);
    s.windows(2).map(|w| (w[1] - w[0] - quarter).powi(2)).sum()
}

/// Farthest vertex strictly between `i` and `j` from the line through them.
/// Ties go to the first.
fn farthest_between(p: &Polyline, i: usize, j: usize) -> (usize, f64) {
    let (a, b) = (p.points[i], p.points[j]);
    let mut best = (i + 1, -1.0);
    for v in i + 1..j {
        let d = line_distance(a, b, p.points[v]);
        if d > best.1 {
            best = (v, d);
        }
    }
    best
}

/// Landmarks before equalization.
///
/// Landmark 3 is searched among vertices leaving at least one vertex on
/// either side of it, so landmarks 2 and 4 always exist. Score ties keep
/// the lexicographically smallest pair.
pub fn detect_landmarks(p: &Polyline) -> Result<LandmarkSet> {
    let n = p.len();
    if n < MIN_LANDMARK_POINTS {
        return Err(ShapeError::TooFewPoints {
            needed: MIN_LANDMARK_POINTS,
            found: n,
        });
    }
    let floor = DEGENERATE_TOL * p.length();
    let mut best: Option<(f64, usize, usize, usize, f64)> = None;
    for i in 0..n {
        for j in i + 4..n {
            let chord = dist(p.points[i], p.points[j]);
            if chord < floor {
                continue;
            }
            let (a, b) = (p.points[i], p.points[j]);
            let mut apex = (i + 2, -1.0);
            for v in i + 2..j - 1 {
                let d = line_distance(a, b, p.points[v]);
                if d > apex.1 {
                    apex = (v, d);
                }
            }
            if apex.1 <= floor {
                continue;
            }
            let score = chord / (p.arc[j] - p.arc[i]) * apex.1.sqrt().sqrt();
            if best.is_none_or(|b| score > b.0) {
                best = Some((score, i, j, apex.0, apex.1));
            }
        }
    }
    let (score, first, last, apex, bend) = best.ok_or(ShapeError::DegenerateChord)?;
    let second = farthest_between(p, first, apex).0;
    let fourth = farthest_between(p, apex, last).0;
    Ok(LandmarkSet::from_indices(p, [first, second, apex, fourth, last], score, bend))
}

/// Moves landmarks 2–4 along the curve to minimize the spacing objective,
/// each by at most `max_shift` times the span between landmarks 1 and 5 and
/// keeping their order. The search is exhaustive over the allowed vertices;
/// equal objectives prefer the smaller total squared shift, so the result
/// never has a larger objective than the input and does not depend on the
/// curve direction.
pub fn equalize(l: &LandmarkSet, p: &Polyline, max_shift: f64) -> LandmarkSet {
    let span = p.arc[l.indices[4]] - p.arc[l.indices[0]];
    let budget = max_shift.max(0.0) * span;
    let window = |g: usize| -> Vec<usize> {
        let home = p.arc[l.indices[g]];
        (l.indices[0] + 1..l.indices[4])
            .filter(|&v| (p.arc[v] - home).abs() <= budget)
            .collect()
    };
    let (w2, w3, w4) = (window(1), window(2), window(3));
    let homes = [1, 2, 3].map(|g| p.arc[l.indices[g]]);
    let cost = |idx: [usize; 3]| -> (f64, f64) {
        let s = [
            p.arc[l.indices[0]],
            p.arc[idx[0]],
            p.arc[idx[1]],
            p.arc[idx[2]],
            p.arc[l.indices[4]],
        ];
        let moved: f64 = (0..3).map(|g| (s[g + 1] - homes[g]).powi(2)).sum();
        (spacing_objective(&s), moved)
    };
    let mut best = ([l.indices[1], l.indices[2], l.indices[3]], (f64::INFINITY, f64::INFINITY));
    best.1 = cost(best.0);
    for &a in &w2 {
        for &b in w3.iter().filter(|&&b| b > a) {
            for &c in w4.iter().filter(|&&c| c > b) {
                let k = cost([a, b, c]);
                if k < best.1 {
                    best = ([a, b, c], k);
                }
            }
        }
    }
    let [a, b, c] = best.0;
    let mut out = LandmarkSet::from_indices(p, [l.indices[0], a, b, c, l.indices[4]], l.score, l.bend);
    out.shifts = [0, 1, 2].map(|g| out.positions[g + 1] - homes[g]);
    out
}

/// Landmarks with the default equalization budget.
pub fn place_landmarks(p: &Polyline) -> Result<LandmarkSet> {
    Ok(equalize(&detect_landmarks(p)?, p, DEFAULT_MAX_SHIFT))
}

/// Options for [`extract_landmarks`].
#[derive(Clone, Copy, Debug)]
pub struct LandmarkOptions {
    /// Number of segments of the arc-length resampling.
    pub resolution: usize,
    /// Absolute resampling step; overrides `resolution` when set.
    pub step: Option<f64>,
    pub max_shift: f64,
}

impl Default for LandmarkOptions {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            step: None,
            max_shift: DEFAULT_MAX_SHIFT,
        }
    }
}

/// Landmarks of a traced curve: resampling (to `resolution` segments, or at
/// `step`), detection and equalization. Returns the resampled curve the indices
/// refer to.
pub fn extract_landmarks(raw: &Polyline, opts: &LandmarkOptions) -> Result<(Polyline, LandmarkSet)> {
    if opts.resolution < MIN_LANDMARK_POINTS - 1 {
        return Err(ShapeError::InvalidArgument(format!(
            "resolution must be at least {}",
            MIN_LANDMARK_POINTS - 1
        )));
    }
    let step = opts.step.unwrap_or(raw.length() / opts.resolution as f64);
    let p = resample(raw, step)?;
    let l = equalize(&detect_landmarks(&p)?, &p, opts.max_shift);
    Ok((p, l))
}

/// [`extract_landmarks`] over many curves, in parallel when requested; the
/// output order follows the input.
pub fn extract_all(curves: &[Polyline], opts: &LandmarkOptions, parallel: bool) -> Vec<Result<LandmarkSet>> {
    let run = |c: &Polyline| extract_landmarks(c, opts).map(|(_, l)| l);
    if parallel {
        curves.par_iter().map(run).collect()
    } else {
        curves.iter().map(run).collect()
    }
}

/// Per-curve record of the landmark placement.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LandmarkAudit {
    pub curve: String,
    pub indices: [usize; 5],
    pub positions: [f64; 5],
    pub landmarks: Vec<[f64; 2]>,
    pub score: f64,
    pub bend: f64,
    pub shifts: [f64; 3],
    pub spacing_objective: f64,
}

impl LandmarkAudit {
    pub fn new(curve: impl Into<String>, l: &LandmarkSet) -> Self {
        Self {
            curve: curve.into(),
            indices: l.indices,
            positions: l.positions,
            landmarks: l
                .configuration
                .to_landmarks()
                .into_iter()
                .map(|v| [v[0], v[1]])
                .collect(),
            score: l.score,
            bend: l.bend,
            shifts: l.shifts,
            spacing_objective: l.spacing_objective(),
        }
    }
}

/// A curve read from disk with its identifier.
#[derive(Clone, Debug)]
pub struct NamedPolyline {
    pub id: String,
    pub polyline: Polyline,
}

/// Result of [`ingest_polylines`].
#[derive(Clone, Debug, Default)]
pub struct Ingested {
    pub curves: Vec<NamedPolyline>,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CurvesJson {
    Wrapped { curves: Vec<Vec<[f64; 2]>> },
    Bare(Vec<Vec<[f64; 2]>>),
}

/// Reads `curve_id,x,y` CSV (rows grouped by id in order of first
/// appearance, point order = row order) or JSON (an array of point arrays,
/// optionally wrapped as `{"curves": [...]}`; ids are the positions).
/// Repeated consecutive points are dropped, and curves left with fewer than
/// five points are skipped; both produce warnings.
pub fn ingest_polylines(path: impl AsRef<Path>) -> Result<Ingested> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut raw: Vec<(String, Vec<[f64; 2]>)> = Vec::new();
    if text.trim().is_empty() {
        return Ok(Ingested::default());
    }
    if is_json(path, &text) {
        let parsed: CurvesJson = serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
        let (CurvesJson::Wrapped { curves } | CurvesJson::Bare(curves)) = parsed;
        for (i, c) in curves.into_iter().enumerate() {
            if c.iter().flatten().any(|v| !v.is_finite()) {
                return Err(format_err(path, format!("curve {i} has non-finite coordinates")));
            }
            raw.push((i.to_string(), c));
        }
    } else {
        let mut rows = csv_rows(path, &text)?;
        if rows.first().is_some_and(|(_, f)| looks_like_header(f, 1)) {
            rows.remove(0);
        }
        for (line, fields) in rows {
            let malformed = |message: String| ShapeError::MalformedRow {
                path: path.to_path_buf(),
                line,
                message,
            };
            if fields.len() != 3 {
                return Err(malformed(format!("expected curve_id,x,y, found {} fields", fields.len())));
            }
            let coord = |f: &str| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| malformed(format!("'{f}' is not a finite number")))
            };
            let point = [coord(&fields[1])?, coord(&fields[2])?];
            match raw.iter_mut().find(|(id, _)| *id == fields[0]) {
                Some((_, pts)) => pts.push(point),
                None => raw.push((fields[0].clone(), vec![point])),
            }
        }
    }
    let mut out = Ingested::default();
    for (id, mut points) in raw {
        let before = points.len();
        points.dedup();
        if points.len() < before {
            out.warnings.push(format!(
                "curve {id}: dropped {} repeated points",
                before - points.len()
            ));
        }
        if points.len() < MIN_POINTS {
            out.warnings.push(format!(
                "curve {id}: skipped, {} points (need {MIN_POINTS})",
                points.len()
            ));
            continue;
        }
        out.curves.push(NamedPolyline {
            polyline: Polyline::new(points).map_err(|e| format_err(path, format!("curve {id}: {e}")))?,
            id,
        });
    }
    Ok(out)
}

/// Writes `curve_id,x,y` CSV with 17 significant digits.
pub fn write_polylines(path: impl AsRef<Path>, curves: &[NamedPolyline]) -> Result<()> {
    let mut text = String::from("curve_id,x,y\n");
    for c in curves {
        for p in c.polyline.points() {
            text.push_str(&format!("{},{}\n", c.id, fmt_row(p)));
        }
    }
    write_text(path.as_ref(), &text)
}
