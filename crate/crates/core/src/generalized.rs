//! Rates from drift and contraction conditions with state-dependent
//! parameters.
//!
//! Given a contraction field `Gamma(x, y)` and a drift ratio field
//! `Lambda(x, y) >= (PV(x) + PV(y) + 1) / (V(x) + V(y) + 1)`, the rate at
//! exponent `r` is `sup Gamma^r Lambda^(1 - r)`. The supremum is taken over a
//! compact domain by a deterministic grid search with local refinement, so
//! results are reproducible and can be checked against a dense grid.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rate::{rho_r_standard, GeometricBound, RateBound, StandardConditions};

type PairFn = dyn Fn(f64, f64) -> f64 + Send + Sync;
type StateFn = dyn Fn(f64) -> f64 + Send + Sync;

/// A nonnegative real-valued function of a state pair.
#[derive(Clone)]
pub struct ScalarField2 {
    eval: Arc<PairFn>,
    pub description: String,
}

impl ScalarField2 {
    pub fn new(
        description: impl Into<String>,
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ScalarField2 {
            eval: Arc::new(eval),
            description: description.into(),
        }
    }

    pub fn constant(value: f64) -> Self {
        ScalarField2::new(format!("constant {value}"), move |_, _| value)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.eval)(x, y)
    }
}

impl fmt::Debug for ScalarField2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField2")
            .field("description", &self.description)
            .finish_non_exhaustive()
    }
}

/// A real-valued function of a single state.
#[derive(Clone)]
pub struct StateFunction {
    eval: Arc<StateFn>,
    pub description: String,
}

impl StateFunction {
    pub fn new(
        description: impl Into<String>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        StateFunction {
            eval: Arc::new(eval),
            description: description.into(),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }
}

impl fmt::Debug for StateFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StateFunction")
            .field("description", &self.description)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainShape {
    /// Axis-aligned box `[x.0, x.1] x [y.0, y.1]`.
    Box { x: (f64, f64), y: (f64, f64) },
    /// Disk around `center`; `open` excludes the boundary circle.
    Disk {
        center: (f64, f64),
        radius: f64,
        #[serde(default)]
        open: bool,
    },
}

/// A bounded region of the product space on which a supremum is searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactDomain {
    pub shape: DomainShape,
    /// Why the supremum over the full space is attained in this region.
    pub justification: String,
}

impl CompactDomain {
    pub fn new(shape: DomainShape, justification: impl Into<String>) -> Result<Self> {
        let d = CompactDomain {
            shape,
            justification: justification.into(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn square(half_width: f64, justification: impl Into<String>) -> Result<Self> {
        Self::new(
            DomainShape::Box {
                x: (-half_width, half_width),
                y: (-half_width, half_width),
            },
            justification,
        )
    }

    pub fn disk(radius: f64, justification: impl Into<String>) -> Result<Self> {
        Self::new(
            DomainShape::Disk {
                center: (0.0, 0.0),
                radius,
                open: false,
            },
            justification,
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self.shape {
            DomainShape::Box { x, y } => {
                let ok =
                    [x.0, x.1, y.0, y.1].iter().all(|v| v.is_finite()) && x.0 < x.1 && y.0 < y.1;
                if !ok {
                    return Err(Error::domain(format!(
                        "box bounds must satisfy lo < hi: {x:?}, {y:?}"
                    )));
                }
            }
            DomainShape::Disk { center, radius, .. } => {
                if !(radius > 0.0)
                    || !radius.is_finite()
                    || !center.0.is_finite()
                    || !center.1.is_finite()
                {
                    return Err(Error::domain(format!(
                        "disk radius must be positive, got {radius}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self.shape {
            DomainShape::Box { x: bx, y: by } => bx.0 <= x && x <= bx.1 && by.0 <= y && y <= by.1,
            DomainShape::Disk {
                center,
                radius,
                open,
            } => {
                let r2 = (x - center.0).powi(2) + (y - center.1).powi(2);
                if open {
                    r2 < radius * radius
                } else {
                    r2 <= radius * radius
                }
            }
        }
    }

    /// `((x_lo, x_hi), (y_lo, y_hi))`.
    pub fn bounding_box(&self) -> ((f64, f64), (f64, f64)) {
        match self.shape {
            DomainShape::Box { x, y } => (x, y),
            DomainShape::Disk { center, radius, .. } => (
                (center.0 - radius, center.0 + radius),
                (center.1 - radius, center.1 + radius),
            ),
        }
    }
}

/// Uniform grid over a domain's bounding box, clipped to the domain.
#[derive(Debug, Clone, Copy)]
pub struct Grid {
    pub x0: f64,
    pub y0: f64,
    pub step: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub fn over(domain: &CompactDomain, step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::domain(format!(
                "grid step must be positive, got {step}"
            )));
        }
        let ((xl, xh), (yl, yh)) = domain.bounding_box();
        let count = |lo: f64, hi: f64| ((hi - lo) / step + 1e-9).floor() as usize + 1;
        Ok(Grid {
            x0: xl,
            y0: yl,
            step,
            nx: count(xl, xh),
            ny: count(yl, yh),
        })
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x0 + i as f64 * self.step,
            self.y0 + j as f64 * self.step,
        )
    }
}

/// Best point of a grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupremumResult {
    pub value: f64,
    pub argmax: (f64, f64),
    /// Grid step of the finest refinement level.
    pub grid_step: f64,
    pub evaluations: usize,
}

/// Controls for [`sup_field`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub initial_step: f64,
    pub levels: usize,
    /// Number of candidate peaks refined at each level.
    pub top_k: usize,
}

impl Default for GridSearch {
    fn default() -> Self {
        GridSearch {
            initial_step: 0.05,
            levels: 6,
            top_k: 5,
        }
    }
}

impl GridSearch {
    pub fn new(initial_step: f64, levels: usize) -> Self {
        GridSearch {
            initial_step,
            levels,
            ..Default::default()
        }
    }

    pub fn final_step(&self) -> f64 {
        self.initial_step / 2f64.powi(self.levels as i32)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    value: f64,
    x: f64,
    y: f64,
}

// Larger value first; ties go to the lexicographically smaller point.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.value
        .total_cmp(&a.value)
        .then(a.x.total_cmp(&b.x))
        .then(a.y.total_cmp(&b.y))
}

fn checked(field: &ScalarField2, x: f64, y: f64) -> Result<f64> {
    let v = field.eval(x, y);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { x, y, value: v })
    }
}

/// Evaluates `field` on every grid point inside `domain`.
///
/// Points outside the domain hold `NEG_INFINITY`. Values are stored row-major
/// with index `i * ny + j`.
pub fn evaluate_grid(
    field: &ScalarField2,
    domain: &CompactDomain,
    grid: &Grid,
) -> Result<Vec<f64>> {
    let rows: Vec<Result<Vec<f64>>> = (0..grid.nx)
        .into_par_iter()
        .map(|i| {
            (0..grid.ny)
                .map(|j| {
                    let (x, y) = grid.point(i, j);
                    if domain.contains(x, y) {
                        checked(field, x, y)
                    } else {
                        Ok(f64::NEG_INFINITY)
                    }
                })
                .collect()
        })
        .collect();
    let mut values = Vec::with_capacity(grid.nx * grid.ny);
    for row in rows {
        values.extend(row?);
    }
    Ok(values)
}

/// Grid points that are at least as large as every in-domain neighbour.
fn local_maxima(values: &[f64], grid: &Grid) -> Vec<Candidate> {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut peaks = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let v = values[i * ny + j];
            if v == f64::NEG_INFINITY {
                continue;
            }
            let mut is_peak = true;
            'nb: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ii, jj) = (i as i64 + di, j as i64 + dj);
                    if ii < 0 || jj < 0 || ii >= nx as i64 || jj >= ny as i64 {
                        continue;
                    }
                    if values[ii as usize * ny + jj as usize] > v {
                        is_peak = false;
                        break 'nb;
                    }
                }
            }
            if is_peak {
                let (x, y) = grid.point(i, j);
                peaks.push(Candidate { value: v, x, y });
            }
        }
    }
    peaks
}

/// Best `k` candidates, skipping any within `spacing` (sup-norm) of one
/// already chosen.
fn select_top(mut candidates: Vec<Candidate>, k: usize, spacing: f64) -> Vec<Candidate> {
    candidates.sort_by(rank);
    let mut chosen: Vec<Candidate> = Vec::with_capacity(k);
    for c in candidates {
        if chosen.len() == k {
            break;
        }
        let crowded = chosen
            .iter()
            .any(|p| (p.x - c.x).abs().max((p.y - c.y).abs()) <= spacing * 1.5);
        if !crowded {
            chosen.push(c);
        }
    }
    chosen
}

const MAX_POLISH_MOVES: usize = 10_000;

// Best of `p` and the points `p + (i, j) * step`, `|i|, |j| <= radius`.
fn best_neighbour(
    field: &ScalarField2,
    domain: &CompactDomain,
    p: Candidate,
    step: f64,
    radius: i32,
    evaluations: &mut usize,
) -> Result<Candidate> {
    let mut best = p;
    for di in -radius..=radius {
        for dj in -radius..=radius {
            if di == 0 && dj == 0 {
                continue;
            }
            let (x, y) = (p.x + di as f64 * step, p.y + dj as f64 * step);
            if !domain.contains(x, y) {
                continue;
            }
            let c = Candidate {
                value: checked(field, x, y)?,
                x,
                y,
            };
            *evaluations += 1;
            if rank(&c, &best) == Ordering::Less {
                best = c;
            }
        }
    }
    Ok(best)
}

/// Supremum of `field` over `domain` by grid search with local refinement.
///
/// Level 0 evaluates the full grid at `search.initial_step` and takes the
/// `top_k` highest local maxima. Each further level halves the step,
/// evaluates the finer grid on a one-coarse-cell neighbourhood of every
/// retained point and moves that point to the best value found, so separate
/// peaks are refined independently. The reported value is the best evaluated
/// point. After the last level every track climbs to a local maximum of the
/// final grid.
pub fn sup_field(
    field: &ScalarField2,
    domain: &CompactDomain,
    search: &GridSearch,
) -> Result<SupremumResult> {
    domain.validate()?;
    if search.top_k == 0 {
        return Err(Error::domain("top_k must be at least 1"));
    }
    let grid = Grid::over(domain, search.initial_step)?;
    let values = evaluate_grid(field, domain, &grid)?;
    let mut evaluations = values.iter().filter(|v| **v != f64::NEG_INFINITY).count();

    let mut peaks = local_maxima(&values, &grid);
    if peaks.is_empty() {
        // Domain thinner than one grid cell; fall back to its center.
        let ((xl, xh), (yl, yh)) = domain.bounding_box();
        let (x, y) = (0.5 * (xl + xh), 0.5 * (yl + yh));
        peaks.push(Candidate {
            value: checked(field, x, y)?,
            x,
            y,
        });
        evaluations += 1;
    }
    peaks.sort_by(rank);
    let mut best = peaks[0];
    let mut tops = select_top(peaks, search.top_k, search.initial_step);

    let mut coarse = search.initial_step;
    for _ in 0..search.levels {
        let fine = coarse / 2.0;
        let mut next: Vec<Candidate> = Vec::with_capacity(tops.len());
        for p in &tops {
            let track = best_neighbour(field, domain, *p, fine, 2, &mut evaluations)?;
            if !next.iter().any(|q| q.x == track.x && q.y == track.y) {
                next.push(track);
            }
        }
        next.sort_by(rank);
        tops = next;
        if rank(&tops[0], &best) == Ordering::Less {
            best = tops[0];
        }
        coarse = fine;
    }
    // Finish each track at a local maximum of the final grid.
    if search.levels > 0 {
        for p in &tops {
            let mut track = *p;
            for _ in 0..MAX_POLISH_MOVES {
                let moved = best_neighbour(field, domain, track, coarse, 1, &mut evaluations)?;
                if moved.x == track.x && moved.y == track.y {
                    break;
                }
                track = moved;
            }
            if rank(&track, &best) == Ordering::Less {
                best = track;
            }
        }
    }

    Ok(SupremumResult {
        value: best.value,
        argmax: (best.x, best.y),
        grid_step: coarse,
        evaluations,
    })
}

/// Inputs of the state-dependent rate.
#[derive(Debug, Clone)]
pub struct GeneralizedSpec {
    /// Metric to drift-function link constant.
    pub a: f64,
    /// Drift function.
    pub v: StateFunction,
    /// One-step expectation of the drift function.
    pub pv: StateFunction,
    pub gamma: ScalarField2,
    pub lambda: ScalarField2,
    pub domain: CompactDomain,
}

impl GeneralizedSpec {
    /// The pointwise product `Gamma^r Lambda^(1 - r)`.
    pub fn rate_field(&self, r: f64) -> ScalarField2 {
        let gamma = self.gamma.clone();
        let lambda = self.lambda.clone();
        ScalarField2::new(
            format!(
                "({})^{r} ({})^(1-{r})",
                gamma.description, lambda.description
            ),
            move |x, y| interpolate_fields(gamma.eval(x, y), lambda.eval(x, y), r),
        )
    }

    /// Spot-checks the hypotheses on a grid of the given step: nonnegative
    /// fields and drift function, and `Lambda` dominating the drift ratio.
    pub fn check_hypotheses(&self, step: f64) -> Result<()> {
        let grid = Grid::over(&self.domain, step)?;
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                let (x, y) = grid.point(i, j);
                if !self.domain.contains(x, y) {
                    continue;
                }
                let (vx, vy) = (self.v.eval(x), self.v.eval(y));
                let g = self.gamma.eval(x, y);
                let l = self.lambda.eval(x, y);
                if vx < 0.0 || vy < 0.0 || g < 0.0 || l < 0.0 {
                    return Err(Error::Hypothesis(format!("negative value at ({x}, {y})")));
                }
                let ratio = (self.pv.eval(x) + self.pv.eval(y) + 1.0) / (vx + vy + 1.0);
                if l < ratio * (1.0 - 1e-12) {
                    return Err(Error::Hypothesis(format!(
                        "Lambda({x}, {y}) = {l} is below the drift ratio {ratio}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn interpolate_fields(gamma: f64, lambda: f64, r: f64) -> f64 {
    if gamma == 0.0 || lambda == 0.0 {
        return 0.0;
    }
    (r * gamma.ln() + (1.0 - r) * lambda.ln()).exp()
}

/// `sup Gamma^r Lambda^(1 - r)` over the spec's domain, with its argmax.
pub fn sup_rate_field(
    spec: &GeneralizedSpec,
    r: f64,
    search: &GridSearch,
) -> Result<SupremumResult> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::range(format!("r must lie in (0, 1), got {r}")));
    }
    sup_field(&spec.rate_field(r), &spec.domain, search)
}

pub fn rho_r_generalized(spec: &GeneralizedSpec, r: f64, search: &GridSearch) -> Result<RateBound> {
    let sup = sup_rate_field(spec, r, search)?;
    Ok(RateBound {
        rho: sup.value,
        r,
        valid: sup.value < 1.0,
    })
}

/// Admissible exponents from the sign pattern of `log Lambda - log Gamma`,
/// evaluated on the domain grid.
pub fn r_interval_generalized(spec: &GeneralizedSpec, step: f64) -> Result<(f64, f64)> {
    let grid = Grid::over(&spec.domain, step)?;
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    let mut sup_min = f64::NEG_INFINITY;
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let (x, y) = grid.point(i, j);
            if !spec.domain.contains(x, y) {
                continue;
            }
            let g = checked(&spec.gamma, x, y)?;
            let l = checked(&spec.lambda, x, y)?;
            sup_min = sup_min.max(g.min(l));
            if g == 0.0 || l == 0.0 || g == l {
                continue;
            }
            let ratio = l.ln() / (l.ln() - g.ln());
            if l > g {
                lower = lower.max(ratio);
            } else {
                upper = upper.min(ratio);
            }
        }
    }
    if !(sup_min < 1.0) {
        return Err(Error::Hypothesis(format!(
            "sup of min(Gamma, Lambda) is {sup_min}, not below 1"
        )));
    }
    let lower = lower.max(0.0);
    let upper = upper.min(1.0);
    if !(lower < upper) {
        return Err(Error::EmptyInterval { lower, upper });
    }
    Ok((lower, upper))
}

/// Minimizes `rate` over `[lo, hi]`: a uniform grid of `grid_points`, then
/// golden-section search on the two cells around the best grid point.
///
/// Returns `(argmin, min)`.
pub fn optimize_r(rate: impl Fn(f64) -> f64, lo: f64, hi: f64, grid_points: usize) -> (f64, f64) {
    assert!(
        lo < hi && grid_points >= 3,
        "need lo < hi and at least 3 grid points"
    );
    let h = (hi - lo) / (grid_points - 1) as f64;
    let eval = |r: f64| {
        let v = rate(r);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut best_i = 0;
    let mut best_v = f64::INFINITY;
    for i in 0..grid_points {
        let v = eval(lo + i as f64 * h);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut best_r = lo + best_i as f64 * h;
    let a = lo + best_i.saturating_sub(1) as f64 * h;
    let b = lo + (best_i + 1).min(grid_points - 1) as f64 * h;
    let (r, v) = golden_section(&eval, a, b, 1e-9, 200);
    if v < best_v {
        best_r = r;
        best_v = v;
    }
    (best_r, best_v)
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

fn golden_section(
    f: &impl Fn(f64) -> f64,
    mut a: f64,
    mut b: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if (b - a).abs() < tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Optimal exponent and rate for constant conditions at a fixed `d`.
pub fn optimize_standard_r(c: &StandardConditions, grid_points: usize) -> Result<RateBound> {
    c.validate()?;
    let rate = |r: f64| {
        if r <= 0.0 || r >= 1.0 {
            return f64::INFINITY;
        }
        rho_r_standard(c, r).map(|b| b.rho).unwrap_or(f64::INFINITY)
    };
    let (r, _) = optimize_r(rate, 0.0, 1.0, grid_points);
    rho_r_standard(c, r)
}

/// Result of optimizing the constant-condition rate jointly over `(r, d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardOptimum {
    pub conditions: StandardConditions,
    pub bound: RateBound,
}

/// Minimizes `rho_r` over `r` in `(0, 1)` and `d` in `[d_lo, d_hi]`, where the
/// conditions at each `d` come from `conditions_at`.
pub fn optimize_standard_rd(
    conditions_at: impl Fn(f64) -> Result<StandardConditions>,
    d_lo: f64,
    d_hi: f64,
    d_points: usize,
    r_points: usize,
) -> Result<StandardOptimum> {
    let rate_at_d = |d: f64| {
        conditions_at(d)
            .and_then(|c| optimize_standard_r(&c, r_points))
            .map(|b| b.rho)
            .unwrap_or(f64::INFINITY)
    };
    let (d, _) = optimize_r(rate_at_d, d_lo, d_hi, d_points);
    let conditions = conditions_at(d)?;
    let bound = optimize_standard_r(&conditions, r_points)?;
    Ok(StandardOptimum { conditions, bound })
}

/// Prefactor `a (PV(x) + V(x) + 1) / (1 - rho)` for a chain started at `x`.
pub fn prefactor_generalized(spec: &GeneralizedSpec, x: f64, rho: f64) -> Result<GeometricBound> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::range(format!("rho must lie in [0, 1), got {rho}")));
    }
    let prefactor = spec.a * (spec.pv.eval(x) + spec.v.eval(x) + 1.0) / (1.0 - rho);
    Ok(GeometricBound {
        prefactor,
        rho,
        n_offset: 0,
    })
}
