//! Monte Carlo checks of the bounds on the synchronously coupled chain
//! `X' = g(X) + Z`, `Y' = g(Y) + Z`.
//!
//! Each replica draws its noise from its own ChaCha stream (`seed`, stream =
//! replica index), so results do not depend on thread count and adding
//! replicas leaves earlier ones untouched.
//!
//! The coupled pair is stored as `(X, Y - X)`. Under synchronous coupling the
//! noise cancels in the difference, which then evolves by
//! `g(X + D) - g(X)`; keeping it explicit preserves relative accuracy long
//! after the difference has dropped below the resolution of `X`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generalized::GeneralizedSpec;
use crate::nar::{gamma_nar_offset, AutoregressiveMap, NARModel};
use crate::rate::GeometricBound;

/// Default burn-in for approximately stationary starts.
pub const DEFAULT_BURN_IN: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "state", rename_all = "snake_case")]
pub enum InitialState {
    Fixed(Vec<f64>),
    /// Draw from an independent chain started at the origin and run for
    /// `burn_in` steps.
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model: NARModel,
    pub x0: Vec<f64>,
    pub y0: InitialState,
    pub n_steps: usize,
    pub n_replicas: usize,
    pub seed: u64,
    pub burn_in: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n_steps == 0 || self.n_replicas == 0 {
            return Err(Error::domain("n_steps and n_replicas must be at least 1"));
        }
        if self.x0.len() != self.model.dim {
            return Err(Error::domain(format!(
                "x0 has {} components, model dimension is {}",
                self.x0.len(),
                self.model.dim
            )));
        }
        if let InitialState::Fixed(y0) = &self.y0 {
            if y0.len() != self.model.dim {
                return Err(Error::domain(format!(
                    "y0 has {} components, model dimension is {}",
                    y0.len(),
                    self.model.dim
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Mean of `|X_n - Y_n|` over coupled replicas; an upper bound on W1.
    CouplingExpectation,
    /// Exact W1 between the empirical marginals of `X_n` and `Y_n` (1-D).
    EmpiricalQuantile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub estimate: f64,
    /// Zero for the empirical-quantile estimator, which carries no error estimate.
    pub standard_error: f64,
}

/// Per-step distance estimates, `n_steps + 1` points starting at step 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WassersteinCurve {
    pub estimator: Estimator,
    pub points: Vec<CurvePoint>,
}

/// One synchronous step: `(g(x) + z, g(y) + z)`.
pub fn step_synchronous(model: &NARModel, x: &[f64], y: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let next_x = x
        .iter()
        .zip(z)
        .map(|(&xi, &zi)| model.map.apply(xi) + zi)
        .collect();
    let next_y = y
        .iter()
        .zip(z)
        .map(|(&yi, &zi)| model.map.apply(yi) + zi)
        .collect();
    (next_x, next_y)
}

fn replica_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Coupled pair in `(x, y - x)` form.
struct Pair {
    x: Vec<f64>,
    delta: Vec<f64>,
}

impl Pair {
    fn start(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Pair {
        let y0 = match &cfg.y0 {
            InitialState::Fixed(y0) => y0.clone(),
            InitialState::Stationary => {
                let mut y = vec![0.0; cfg.model.dim];
                for _ in 0..cfg.burn_in {
                    for yi in y.iter_mut() {
                        *yi = cfg.model.map.apply(*yi) + normal(rng);
                    }
                }
                y
            }
        };
        let delta = y0.iter().zip(&cfg.x0).map(|(y, x)| y - x).collect();
        Pair {
            x: cfg.x0.clone(),
            delta,
        }
    }

    fn advance(&mut self, map: &AutoregressiveMap, rng: &mut ChaCha8Rng) {
        for (xi, di) in self.x.iter_mut().zip(self.delta.iter_mut()) {
            let next_delta = map.increment(*xi, *di);
            debug_assert!(
                !matches!(map, AutoregressiveMap::PerturbedSine)
                    || (next_delta.abs() - gamma_nar_offset(*xi, *di) * di.abs()).abs()
                        <= 1e-12 * next_delta.abs(),
                "synchronous coupling identity violated at x = {xi}, delta = {di}"
            );
            *xi = map.apply(*xi) + normal(rng);
            *di = next_delta;
        }
    }

    fn distance(&self) -> f64 {
        if self.delta.len() == 1 {
            self.delta[0].abs()
        } else {
            self.delta.iter().map(|d| d * d).sum::<f64>().sqrt()
        }
    }

    fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.delta).all(|v| v.is_finite())
    }
}

struct ReplicaPath {
    distances: Vec<f64>,
    /// `(x_n, y_n)` per step, only recorded for 1-D quantile estimates.
    marginals: Option<Vec<(f64, f64)>>,
}

fn run_replica(cfg: &SimConfig, replica: usize, record_marginals: bool) -> Result<ReplicaPath> {
    let mut rng = replica_rng(cfg.seed, replica as u64);
    let mut pair = Pair::start(cfg, &mut rng);
    let mut distances = Vec::with_capacity(cfg.n_steps + 1);
    let mut marginals = record_marginals.then(|| Vec::with_capacity(cfg.n_steps + 1));
    for step in 0..=cfg.n_steps {
        if step > 0 {
            pair.advance(&cfg.model.map, &mut rng);
        }
        if !pair.is_finite() {
            return Err(Error::Overflow { replica, step });
        }
        distances.push(pair.distance());
        if let Some(m) = marginals.as_mut() {
            m.push((pair.x[0], pair.x[0] + pair.delta[0]));
        }
    }
    Ok(ReplicaPath {
        distances,
        marginals,
    })
}

fn run_all(cfg: &SimConfig, record_marginals: bool) -> Result<Vec<ReplicaPath>> {
    cfg.validate()?;
    if record_marginals && cfg.model.dim != 1 {
        return Err(Error::domain(
            "empirical W1 estimation is one-dimensional only",
        ));
    }
    (0..cfg.n_replicas)
        .into_par_iter()
        .map(|i| run_replica(cfg, i, record_marginals))
        .collect()
}

fn mean_and_stderr(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = values.clone().sum::<f64>() / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (nf - 1.0)).sqrt();
    (mean, sd / nf.sqrt())
}

fn coupling_curve(cfg: &SimConfig, paths: &[ReplicaPath]) -> WassersteinCurve {
    let points = (0..=cfg.n_steps)
        .map(|step| {
            let (estimate, standard_error) =
                mean_and_stderr(paths.iter().map(|p| p.distances[step]), paths.len());
            CurvePoint {
                step,
                estimate,
                standard_error,
            }
        })
        .collect();
    WassersteinCurve {
        estimator: Estimator::CouplingExpectation,
        points,
    }
}

/// Coupling-expectation curve `n -> E|X_n - Y_n|`.
pub fn simulate_curve(cfg: &SimConfig) -> Result<WassersteinCurve> {
    let paths = run_all(cfg, false)?;
    Ok(coupling_curve(cfg, &paths))
}

/// Both estimators from the same replicas (1-D only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledCurves {
    pub coupling: WassersteinCurve,
    pub quantile: WassersteinCurve,
}

pub fn simulate_curves(cfg: &SimConfig) -> Result<CoupledCurves> {
    let paths = run_all(cfg, true)?;
    let coupling = coupling_curve(cfg, &paths);
    let mut xs = vec![0.0; paths.len()];
    let mut ys = vec![0.0; paths.len()];
    let mut points = Vec::with_capacity(cfg.n_steps + 1);
    for step in 0..=cfg.n_steps {
        for (k, p) in paths.iter().enumerate() {
            let (x, y) = p.marginals.as_ref().expect("marginals recorded")[step];
            xs[k] = x;
            ys[k] = y;
        }
        points.push(CurvePoint {
            step,
            estimate: estimate_w1_empirical(&xs, &ys)?,
            standard_error: 0.0,
        });
    }
    Ok(CoupledCurves {
        coupling,
        quantile: WassersteinCurve {
            estimator: Estimator::EmpiricalQuantile,
            points,
        },
    })
}

/// W1 between two equal-size empirical measures on the line: the mean
/// absolute difference of order statistics.
pub fn estimate_w1_empirical(sample_a: &[f64], sample_b: &[f64]) -> Result<f64> {
    if sample_a.len() != sample_b.len() {
        return Err(Error::LengthMismatch {
            left: sample_a.len(),
            right: sample_b.len(),
        });
    }
    if sample_a.is_empty() {
        return Err(Error::domain("samples must be nonempty"));
    }
    let mut a = sample_a.to_vec();
    let mut b = sample_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let total: f64 = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum();
    Ok(total / a.len() as f64)
}

/// One step of a recorded 1-D coupled trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub x: f64,
    /// `y - x`.
    pub delta: f64,
    /// Noise used to move from this step to the next.
    pub z: f64,
}

/// A single 1-D coupled trajectory of `n_steps` transitions, for pathwise
/// checks. Uses stream 0 of `seed`.
pub fn coupled_trajectory(
    model: &NARModel,
    x0: f64,
    y0: f64,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<TrajectoryStep>> {
    model.validate()?;
    if model.dim != 1 {
        return Err(Error::domain("trajectory recording is one-dimensional"));
    }
    let mut rng = replica_rng(seed, 0);
    let mut x = x0;
    let mut delta = y0 - x0;
    let mut out = Vec::with_capacity(n_steps + 1);
    for step in 0..=n_steps {
        if !(x.is_finite() && delta.is_finite()) {
            return Err(Error::Overflow { replica: 0, step });
        }
        let z = if step < n_steps {
            normal(&mut rng)
        } else {
            0.0
        };
        out.push(TrajectoryStep { x, delta, z });
        let next_delta = model.map.increment(x, delta);
        x = model.map.apply(x) + z;
        delta = next_delta;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepCheck {
    pub step: usize,
    pub estimate: f64,
    pub standard_error: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub steps: Vec<StepCheck>,
    pub passed: bool,
}

/// Checks `estimate <= bound(n) + n_se * standard_error` at every step.
pub fn check_curve_against_bound(
    curve: &WassersteinCurve,
    bound: &GeometricBound,
    n_se: f64,
) -> BoundCheck {
    let steps: Vec<StepCheck> = curve
        .points
        .iter()
        .map(|p| {
            let b = bound.at(p.step as u64);
            StepCheck {
                step: p.step,
                estimate: p.estimate,
                standard_error: p.standard_error,
                bound: b,
                pass: p.estimate <= b + n_se * p.standard_error,
            }
        })
        .collect();
    let passed = steps.iter().all(|s| s.pass);
    BoundCheck { steps, passed }
}

/// Least-squares slope of `log(estimate)` against step over `from..=to`,
/// skipping zero estimates.
pub fn log_linear_slope(curve: &WassersteinCurve, from: usize, to: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = curve
        .points
        .iter()
        .filter(|p| p.step >= from && p.step <= to && p.estimate > 0.0)
        .map(|p| (p.step as f64, p.estimate.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub x: f64,
    pub y: f64,
    /// Monte Carlo estimate of `E psi_r(X_1, Y_1)`.
    pub estimate: f64,
    pub standard_error: f64,
    /// `rho * psi_r(x, y)`.
    pub bound: f64,
    /// `bound + 3 se - estimate`; negative on failure.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub r: f64,
    pub rho: f64,
    pub pairs: Vec<PairCheck>,
    pub passed: bool,
}

/// Checks the one-step contraction `E psi_r(X_1, Y_1) <= rho psi_r(x, y)` of
/// `psi_r(x, y) = |x - y|^r (V(x) + V(y) + 1)^(1 - r)` under synchronous
/// coupling, at each starting pair, with a 3 standard error allowance.
pub fn verify_psi_r_contraction(
    model: &NARModel,
    spec: &GeneralizedSpec,
    r: f64,
    rho: f64,
    pairs: &[(f64, f64)],
    n_noise: usize,
    seed: u64,
) -> Result<ContractionReport> {
    model.validate()?;
    if model.dim != 1 {
        return Err(Error::domain("contraction check is one-dimensional"));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::range(format!("r must lie in (0, 1), got {r}")));
    }
    if n_noise < 2 {
        return Err(Error::domain("need at least 2 noise draws per pair"));
    }
    let psi_r = |x: f64, delta: f64| {
        let dist = delta.abs();
        if dist == 0.0 {
            return 0.0;
        }
        let h = spec.v.eval(x) + spec.v.eval(x + delta) + 1.0;
        dist.powf(r) * h.powf(1.0 - r)
    };
    let checks: Vec<PairCheck> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, &(x, y))| {
            let mut rng = replica_rng(seed, k as u64);
            let delta = y - x;
            let next_delta = model.map.increment(x, delta);
            let gx = model.map.apply(x);
            let values: Vec<f64> = (0..n_noise)
                .map(|_| psi_r(gx + normal(&mut rng), next_delta))
                .collect();
            let (estimate, standard_error) = mean_and_stderr(values.iter().copied(), n_noise);
            let bound = rho * psi_r(x, delta);
            let margin = bound + 3.0 * standard_error - estimate;
            PairCheck {
                x,
                y,
                estimate,
                standard_error,
                bound,
                margin,
                pass: margin >= 0.0,
            }
        })
        .collect();
    let passed = checks.iter().all(|c| c.pass);
    Ok(ContractionReport {
        r,
        rho,
        pairs: checks,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nar::{gamma_nar, nar_spec, FieldChoice};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn config(x0: f64, y0: InitialState, steps: usize, replicas: usize) -> SimConfig {
        SimConfig {
            model: NARModel::default(),
            x0: vec![x0],
            y0,
            n_steps: steps,
            n_replicas: replicas,
            seed: 42,
            burn_in: 200,
        }
    }

    #[test]
    fn synchronous_step_examples() {
        let m = NARModel::default();
        let (a, b) = step_synchronous(&m, &[1.7], &[1.7], &[0.3]);
        assert_eq!(a, b);
        let (a, b) = step_synchronous(&m, &[PI], &[-PI], &[0.0]);
        assert_abs_diff_eq!(a[0], PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[0], -PI / 2.0, epsilon = 1e-15);
        for &(x, y, z) in &[(0.4, -2.0, 1.3), (5.0, 4.0, -0.7), (-3.0, 1.0, 0.0)] {
            let (a, b) = step_synchronous(&m, &[x], &[y], &[z]);
            assert_abs_diff_eq!(
                (a[0] - b[0]).abs(),
                gamma_nar(x, y) * (x - y).abs(),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn equal_starts_give_zero_curve() {
        let curve = simulate_curve(&config(0.8, InitialState::Fixed(vec![0.8]), 10, 200)).unwrap();
        assert_eq!(curve.points.len(), 11);
        assert!(curve
            .points
            .iter()
            .all(|p| p.estimate == 0.0 && p.standard_error == 0.0));
    }

    #[test]
    fn linear_map_halves_exactly() {
        let mut cfg = config(1.0, InitialState::Fixed(vec![0.0]), 20, 500);
        cfg.model.map = AutoregressiveMap::Linear { slope: 0.5 };
        let curve = simulate_curve(&cfg).unwrap();
        for p in &curve.points {
            assert_eq!(p.estimate, 0.5f64.powi(p.step as i32));
            assert_eq!(p.standard_error, 0.0);
        }
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let cfg = config(3.0, InitialState::Stationary, 15, 300);
        let a = simulate_curve(&cfg).unwrap();
        let b = simulate_curve(&cfg).unwrap();
        assert_eq!(a, b);
        // Replica k's path does not depend on how many replicas run.
        let r5 = run_replica(&cfg, 5, false).unwrap().distances;
        let mut bigger = cfg.clone();
        bigger.n_replicas = 1000;
        assert_eq!(run_replica(&bigger, 5, false).unwrap().distances, r5);
    }

    #[test]
    fn vector_states() {
        let mut cfg = config(0.0, InitialState::Fixed(vec![1.0, -1.0, 2.0]), 5, 50);
        cfg.model.dim = 3;
        cfg.x0 = vec![0.0, 0.0, 0.0];
        let curve = simulate_curve(&cfg).unwrap();
        assert_abs_diff_eq!(curve.points[0].estimate, 6f64.sqrt(), epsilon = 1e-14);
        assert!(curve.points[5].estimate < curve.points[0].estimate);
        assert!(simulate_curves(&cfg).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = config(1.0, InitialState::Fixed(vec![2.0]), 2000, 2);
        cfg.model.map = AutoregressiveMap::Linear { slope: 3.0 };
        assert!(matches!(simulate_curve(&cfg), Err(Error::Overflow { .. })));
    }

    #[test]
    fn config_validation() {
        let mut cfg = config(1.0, InitialState::Stationary, 0, 10);
        assert!(simulate_curve(&cfg).is_err());
        cfg.n_steps = 3;
        cfg.x0 = vec![1.0, 2.0];
        assert!(simulate_curve(&cfg).is_err());
    }

    #[test]
    fn w1_examples() {
        let a = [0.3, -1.0, 2.5, 7.0];
        assert_eq!(estimate_w1_empirical(&a, &a).unwrap(), 0.0);
        assert_abs_diff_eq!(
            estimate_w1_empirical(&[0.0, 2.0], &[3.0, 1.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let shifted: Vec<f64> = a.iter().map(|v| v + 0.25).collect();
        assert_abs_diff_eq!(
            estimate_w1_empirical(&a, &shifted).unwrap(),
            0.25,
            epsilon = 1e-15
        );
        assert!(matches!(
            estimate_w1_empirical(&a, &a[..2]),
            Err(Error::LengthMismatch { left: 4, right: 2 })
        ));
        assert!(estimate_w1_empirical(&[], &[]).is_err());
    }

    #[test]
    fn coupling_dominates_quantile_estimate() {
        let curves = simulate_curves(&config(3.0, InitialState::Stationary, 12, 4000)).unwrap();
        for (c, q) in curves.coupling.points.iter().zip(&curves.quantile.points) {
            // Float slack: Y is materialized as X + D.
            assert!(
                q.estimate <= c.estimate + 3.0 * c.standard_error + 1e-12,
                "{c:?} {q:?}"
            );
        }
    }

    #[test]
    fn trajectory_pathwise_identity() {
        let traj = coupled_trajectory(&NARModel::default(), 2.0, -1.5, 500, 1).unwrap();
        assert_eq!(traj.len(), 501);
        for w in traj.windows(2) {
            let rhs = gamma_nar_offset(w[0].x, w[0].delta) * w[0].delta.abs();
            assert!((w[1].delta.abs() - rhs).abs() <= 1e-12 * rhs);
            assert_abs_diff_eq!(w[1].x, crate::nar::g_eval(w[0].x) + w[0].z, epsilon = 0.0);
        }
    }

    #[test]
    fn contraction_diagonal_pair_passes() {
        let spec = nar_spec(FieldChoice::Tight, 1.0).unwrap();
        let report = verify_psi_r_contraction(
            &NARModel::default(),
            &spec,
            0.382,
            0.577,
            &[(0.0, 0.0), (1.5, 1.5)],
            100,
            3,
        )
        .unwrap();
        assert!(report.passed);
        for c in &report.pairs {
            assert_eq!(c.estimate, 0.0);
            assert_eq!(c.bound, 0.0);
        }
    }

    #[test]
    fn log_slope_below_tight_rate() {
        let curve = simulate_curve(&config(3.0, InitialState::Stationary, 30, 20_000)).unwrap();
        let slope = log_linear_slope(&curve, 5, 30).unwrap();
        assert!(slope <= 0.577f64.ln() + 0.03, "slope {slope}");
    }

    #[test]
    fn bound_check_and_slope() {
        let curve = WassersteinCurve {
            estimator: Estimator::CouplingExpectation,
            points: (0..10)
                .map(|n| CurvePoint {
                    step: n,
                    estimate: 2.0 * 0.5f64.powi(n as i32),
                    standard_error: 0.0,
                })
                .collect(),
        };
        assert_abs_diff_eq!(
            log_linear_slope(&curve, 0, 9).unwrap(),
            0.5f64.ln(),
            epsilon = 1e-12
        );
        let ok = GeometricBound {
            prefactor: 2.0,
            rho: 0.5,
            n_offset: 0,
        };
        assert!(check_curve_against_bound(&curve, &ok, 3.0).passed);
        let tight = GeometricBound {
            prefactor: 2.0,
            rho: 0.4,
            n_offset: 0,
        };
        let check = check_curve_against_bound(&curve, &tight, 3.0);
        assert!(!check.passed);
        assert!(check.steps[0].pass && !check.steps[1].pass);
    }
}
