//! The sine-perturbed autoregressive chain `X' = g(X) + Z` with
//! `g(x) = x/2 - sin(x)/2` and standard normal noise.
//!
//! With `V(x) = x^2` the chain satisfies the constant drift condition with
//! `a = 1`, `eta = 1/2`, `L = 3/2`, and the synchronous coupling gives the
//! contraction field
//!
//! ```text
//! Gamma(x, y) = |g(x) - g(y)| / |x - y|   (x != y),   |g'(x)|   (x == y).
//! ```
//!
//! Two drift ratio fields are provided: a loose one built from the bound
//! `PV(x) <= x^2/2 + 3/2`, and the exact ratio.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generalized::{
    sup_field, CompactDomain, DomainShape, GeneralizedSpec, GridSearch, ScalarField2, StateFunction,
};
use crate::rate::StandardConditions;

/// `2 pi^2`: above this level the coupling set contains `(pi, pi)`, where the
/// contraction factor reaches 1.
pub const TWO_PI_SQ: f64 = 2.0 * PI * PI;

/// Half-width of the box containing every maximizer for the exact drift ratio.
pub const TIGHT_HALF_WIDTH: f64 = 26.0;

/// `x/2 - sin(x)/2`.
#[inline]
pub fn g_eval(x: f64) -> f64 {
    0.5 * x - 0.5 * x.sin()
}

// 1 - sin(h)/h without cancellation near 0.
fn one_minus_sinc(h: f64) -> f64 {
    let a = h.abs();
    if a < 0.5 {
        let h2 = h * h;
        // Alternating series sum_{k>=1} (-1)^(k+1) h^(2k) / (2k+1)!
        const C: [f64; 7] = [
            1.0 / 6.0,
            -1.0 / 120.0,
            1.0 / 5040.0,
            -1.0 / 362_880.0,
            1.0 / 39_916_800.0,
            -1.0 / 6_227_020_800.0,
            1.0 / 1_307_674_368_000.0,
        ];
        let mut acc = 0.0;
        for c in C.iter().rev() {
            acc = acc * h2 + c;
        }
        acc * h2
    } else {
        1.0 - h.sin() / h
    }
}

// 1 - cos(m) sin(h)/h = 2 sin^2(m/2) + cos(m) (1 - sin(h)/h).
#[inline]
fn one_minus_cos_sinc(m: f64, h: f64) -> f64 {
    let s = (0.5 * m).sin();
    2.0 * s * s + m.cos() * one_minus_sinc(h)
}

/// Contraction field of the synchronous coupling.
///
/// Uses `sin x - sin y = 2 cos((x+y)/2) sin((x-y)/2)`, so the diagonal value
/// `(1 - cos x)/2` is the continuous limit and no near-diagonal cancellation
/// occurs.
pub fn gamma_nar(x: f64, y: f64) -> f64 {
    0.5 * one_minus_cos_sinc(0.5 * (x + y), 0.5 * (x - y))
}

/// `Gamma(x, x + delta)`, accurate even when `delta` is far below the
/// resolution of `x`.
pub fn gamma_nar_offset(x: f64, delta: f64) -> f64 {
    0.5 * one_minus_cos_sinc(x + 0.5 * delta, 0.5 * delta)
}

/// `(x^2/2 + y^2/2 + 4) / (x^2 + y^2 + 1)`.
pub fn lambda_loose(x: f64, y: f64) -> f64 {
    let s = x * x + y * y;
    (0.5 * s + 4.0) / (s + 1.0)
}

/// `(g(x)^2 + g(y)^2 + 3) / (x^2 + y^2 + 1)`, the exact drift ratio for
/// `V(x) = x^2`.
pub fn lambda_tight(x: f64, y: f64) -> f64 {
    let (gx, gy) = (g_eval(x), g_eval(y));
    (gx * gx + gy * gy + 3.0) / (x * x + y * y + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldChoice {
    /// Drift ratio from the loosened bound `PV(x) <= x^2/2 + 3/2`.
    Loose,
    /// Exact drift ratio.
    Tight,
}

impl std::fmt::Display for FieldChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FieldChoice::Loose => "loose",
            FieldChoice::Tight => "tight",
        })
    }
}

impl std::str::FromStr for FieldChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loose" => Ok(FieldChoice::Loose),
            "tight" => Ok(FieldChoice::Tight),
            other => Err(Error::domain(format!(
                "unknown field choice '{other}' (expected loose or tight)"
            ))),
        }
    }
}

/// Compact region containing all maximizers of `Gamma^r Lambda^(1-r)`.
pub fn domain_for(choice: FieldChoice) -> CompactDomain {
    match choice {
        FieldChoice::Loose => CompactDomain {
            shape: DomainShape::Disk {
                center: (0.0, 0.0),
                radius: TWO_PI_SQ.sqrt(),
                open: false,
            },
            justification:
                "every exterior point is beaten by a diagonal point (xi, xi) with \
                            xi in [-pi, pi] and the same contraction value but a larger drift ratio"
                    .into(),
        },
        FieldChoice::Tight => CompactDomain {
            shape: DomainShape::Box {
                x: (-TIGHT_HALF_WIDTH, TIGHT_HALF_WIDTH),
                y: (-TIGHT_HALF_WIDTH, TIGHT_HALF_WIDTH),
            },
            justification: "outside the box the exact drift ratio stays below 0.284, while a \
                            diagonal point with the same contraction value exceeds it"
                .into(),
        },
    }
}

/// The state map `g` of the autoregressive chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AutoregressiveMap {
    /// `x/2 - sin(x)/2`, applied componentwise.
    PerturbedSine,
    /// `slope * x`.
    Linear { slope: f64 },
}

impl AutoregressiveMap {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            AutoregressiveMap::PerturbedSine => g_eval(x),
            AutoregressiveMap::Linear { slope } => slope * x,
        }
    }

    /// `g(x + delta) - g(x)`.
    #[inline]
    pub fn increment(&self, x: f64, delta: f64) -> f64 {
        match *self {
            AutoregressiveMap::PerturbedSine => {
                // Gamma(x, x + delta) * delta, scaled last so the identity
                // survives into the subnormal range.
                gamma_nar_offset(x, delta) * delta
            }
            AutoregressiveMap::Linear { slope } => slope * delta,
        }
    }

    /// `|g(x) - g(y)| / |x - y|`, with the derivative on the diagonal.
    pub fn contraction(&self, x: f64, y: f64) -> f64 {
        match *self {
            AutoregressiveMap::PerturbedSine => gamma_nar(x, y),
            AutoregressiveMap::Linear { slope } => slope.abs(),
        }
    }
}

/// An autoregressive chain `X' = g(X) + Z` with `Z` standard normal in
/// `dim` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NARModel {
    pub dim: usize,
    /// Drift scaling `c` in `V(x) = |x|^2 / (c * dim)`.
    pub c_tune: f64,
    pub map: AutoregressiveMap,
}

impl Default for NARModel {
    fn default() -> Self {
        NARModel {
            dim: 1,
            c_tune: 1.0,
            map: AutoregressiveMap::PerturbedSine,
        }
    }
}

impl NARModel {
    pub fn new(dim: usize, c_tune: f64, map: AutoregressiveMap) -> Result<Self> {
        let m = NARModel { dim, c_tune, map };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::domain("dimension must be positive"));
        }
        let min_c = 1.0 / (2.0 * self.dim as f64);
        if !(self.c_tune >= min_c) || !self.c_tune.is_finite() {
            return Err(Error::domain(format!(
                "c_tune = {} must be at least 1/(2 dim) = {min_c}",
                self.c_tune
            )));
        }
        Ok(())
    }

    /// Metric to drift-function link constant `c * dim`.
    pub fn a(&self) -> f64 {
        self.c_tune * self.dim as f64
    }

    /// `V(x) = |x|^2 / (c * dim)`.
    pub fn drift_function(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>() / self.a()
    }

    /// `PV(x) = |g(x)|^2 / (c * dim) + 1/c`.
    pub fn drift_expectation(&self, x: &[f64]) -> f64 {
        x.iter().map(|&v| self.map.apply(v).powi(2)).sum::<f64>() / self.a() + 1.0 / self.c_tune
    }
}

/// The one-dimensional generalized conditions with `V(x) = x^2 / c`.
///
/// With `c = 1` the fields are [`gamma_nar`] with [`lambda_loose`] or
/// [`lambda_tight`], searched over [`domain_for`]. Other `c` reuse the same
/// domain, which is then trusted rather than established.
pub fn nar_spec(choice: FieldChoice, c_tune: f64) -> Result<GeneralizedSpec> {
    NARModel::new(1, c_tune, AutoregressiveMap::PerturbedSine)?;
    let c = c_tune;
    let lambda = match choice {
        FieldChoice::Loose if c == 1.0 => ScalarField2::new("loose drift ratio", lambda_loose),
        FieldChoice::Tight if c == 1.0 => ScalarField2::new("exact drift ratio", lambda_tight),
        // g(x)^2 <= x^2/2 + 1/2 gives the loose numerator.
        FieldChoice::Loose => {
            ScalarField2::new(format!("loose drift ratio, c = {c}"), move |x, y| {
                let s = x * x + y * y;
                (0.5 * s + 3.0 + c) / (s + c)
            })
        }
        FieldChoice::Tight => {
            ScalarField2::new(format!("exact drift ratio, c = {c}"), move |x, y| {
                let (gx, gy) = (g_eval(x), g_eval(y));
                (gx * gx + gy * gy + 2.0 + c) / (x * x + y * y + c)
            })
        }
    };
    let mut domain = domain_for(choice);
    if c != 1.0 {
        domain.justification = format!("assumed for c = {c}; {}", domain.justification);
    }
    Ok(GeneralizedSpec {
        a: c,
        v: StateFunction::new(format!("x^2 / {c}"), move |x| x * x / c),
        pv: StateFunction::new(format!("(g(x)^2 + 1) / {c}"), move |x| {
            let gx = g_eval(x);
            (gx * gx + 1.0) / c
        }),
        gamma: ScalarField2::new("synchronous-coupling contraction", gamma_nar),
        lambda,
        domain,
    })
}

/// Final grid resolution used by [`gamma_sup_on_coupling_set`].
const COUPLING_SET_RESOLUTION: f64 = 1e-7;

/// `sup Gamma(x, y)` over the open coupling set `x^2 + y^2 < d`.
///
/// Defined for `6 < d <= 2 pi^2`; the value at `2 pi^2` is exactly 1.
pub fn gamma_sup_on_coupling_set(d: f64, grid_step: f64) -> Result<f64> {
    if (d - TWO_PI_SQ).abs() <= 1e-12 * TWO_PI_SQ {
        return Ok(1.0);
    }
    if !(d > 6.0 && d < TWO_PI_SQ) {
        return Err(Error::domain(format!(
            "coupling-set level d = {d} must lie in (6, 2 pi^2 = {TWO_PI_SQ}]"
        )));
    }
    if !(grid_step > 0.0) {
        return Err(Error::domain(format!(
            "grid step must be positive, got {grid_step}"
        )));
    }
    let domain = CompactDomain::new(
        DomainShape::Disk {
            center: (0.0, 0.0),
            radius: d.sqrt(),
            open: true,
        },
        "coupling set",
    )?;
    let levels = (grid_step / COUPLING_SET_RESOLUTION).log2().ceil().max(0.0) as usize;
    let field = ScalarField2::new("synchronous-coupling contraction", gamma_nar);
    let search = GridSearch {
        initial_step: grid_step,
        levels,
        top_k: 5,
    };
    Ok(sup_field(&field, &domain, &search)?.value)
}

/// `(d, gamma(d))` at `points` equally spaced levels strictly inside
/// `(6, 2 pi^2)`; both endpoints are excluded.
pub fn gamma_curve(points: usize, grid_step: f64) -> Result<Vec<(f64, f64)>> {
    if points < 3 {
        return Err(Error::domain(format!(
            "need at least 3 sweep points, got {points}"
        )));
    }
    let h = (TWO_PI_SQ - 6.0) / (points + 1) as f64;
    (1..=points)
        .map(|i| {
            let d = 6.0 + i as f64 * h;
            gamma_sup_on_coupling_set(d, grid_step).map(|g| (d, g))
        })
        .collect()
}

/// Constant conditions of the chain with `V(x) = x^2`: `a = 1`, `eta = 1/2`,
/// `L = 3/2`, `K = 1`, and `gamma` the contraction supremum on the coupling set.
pub fn standard_conditions_nar(d: f64, grid_step: f64) -> Result<StandardConditions> {
    if !(d > 6.0 && d < TWO_PI_SQ) {
        return Err(Error::domain(format!(
            "coupling-set level d = {d} must lie in (6, 2 pi^2 = {TWO_PI_SQ})"
        )));
    }
    let gamma = gamma_sup_on_coupling_set(d, grid_step)?;
    StandardConditions::new(1.0, 0.5, 1.5, gamma, 1.0, d)
}
