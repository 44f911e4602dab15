//! Closed-form rates for constant-parameter drift and contraction.
//!
//! The conditions are a drift inequality `PV <= eta V + L` together with a
//! metric link `psi(x, y) / a <= V(x) + V(y) + 1`, and a contraction factor
//! `gamma < 1` on the coupling set `{V(x) + V(y) < d}` with expansion factor
//! `K` off it. For an exponent `r` in the admissible interval the rate is
//!
//! ```text
//! rho_r = max( gamma^r (2L + 1)^(1 - r),  K^r lambda^(1 - r) ),
//! lambda = (eta d + 2L + 1) / (d + 1).
//! ```
//!
//! Everything here evaluates formulas at given `(r, d)`; searching over them is
//! done by [`crate::generalized::optimize_r`] and
//! [`crate::generalized::optimize_standard_rd`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the constant drift and contraction conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardConditions {
    /// Metric to drift-function link constant.
    pub a: f64,
    /// Drift factor, in `[0, 1)`.
    pub eta: f64,
    /// Drift offset.
    #[serde(rename = "L")]
    pub l: f64,
    /// Contraction factor on the coupling set, in `[0, 1)`.
    pub gamma: f64,
    /// Expansion factor off the coupling set.
    #[serde(rename = "K")]
    pub k: f64,
    /// Coupling-set level.
    pub d: f64,
}

impl StandardConditions {
    pub fn new(a: f64, eta: f64, l: f64, gamma: f64, k: f64, d: f64) -> Result<Self> {
        let c = StandardConditions {
            a,
            eta,
            l,
            gamma,
            k,
            d,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.eta, self.l, self.gamma, self.k, self.d];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("all parameters must be finite"));
        }
        if self.a <= 0.0 {
            return Err(Error::domain(format!("a must be positive, got {}", self.a)));
        }
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::domain(format!(
                "eta must lie in [0, 1), got {}",
                self.eta
            )));
        }
        if self.l < 0.0 {
            return Err(Error::domain(format!(
                "L must be nonnegative, got {}",
                self.l
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::domain(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.k < 0.0 {
            return Err(Error::domain(format!(
                "K must be nonnegative, got {}",
                self.k
            )));
        }
        lambda_of_d(self.eta, self.l, self.d)?;
        Ok(())
    }

    /// `(eta d + 2L + 1) / (d + 1)`.
    pub fn lambda(&self) -> f64 {
        (self.eta * self.d + 2.0 * self.l + 1.0) / (self.d + 1.0)
    }
}

/// A computed rate together with the exponent that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    pub rho: f64,
    pub r: f64,
    /// `rho < 1` and `r` lies in the admissible interval.
    pub valid: bool,
}

/// `W(delta_x P^n, pi) <= prefactor * rho^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricBound {
    pub prefactor: f64,
    pub rho: f64,
    /// Exponent offset; zero for discrete-time bounds.
    pub n_offset: u64,
}

impl GeometricBound {
    /// Value of the bound after `n` steps.
    pub fn at(&self, n: u64) -> f64 {
        let exponent = n.saturating_add(self.n_offset);
        self.prefactor * self.rho.powf(exponent as f64)
    }
}

/// Contraction factor of the drift outside the coupling set.
pub fn lambda_of_d(eta: f64, l: f64, d: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eta) || l < 0.0 {
        return Err(Error::domain(format!(
            "need 0 <= eta < 1 and L >= 0, got eta = {eta}, L = {l}"
        )));
    }
    let threshold = 2.0 * l / (1.0 - eta);
    if !(d > threshold) {
        return Err(Error::domain(format!(
            "coupling-set level d = {d} must exceed 2L/(1 - eta) = {threshold}"
        )));
    }
    Ok((eta * d + 2.0 * l + 1.0) / (d + 1.0))
}

/// True iff `K <= 1` or `log K log(2L + 1) < log gamma log lambda`.
pub fn check_a3(c: &StandardConditions) -> Result<bool> {
    c.validate()?;
    if c.k <= 1.0 {
        return Ok(true);
    }
    let lhs = c.k.ln() * (2.0 * c.l + 1.0).ln();
    let rhs = c.gamma.ln() * c.lambda().ln();
    Ok(lhs < rhs)
}

/// Open interval of admissible exponents `r`.
///
/// The upper endpoint is 1 when `K <= 1`.
pub fn r_interval_standard(c: &StandardConditions) -> Result<(f64, f64)> {
    if !check_a3(c)? {
        let lhs = c.k.ln() * (2.0 * c.l + 1.0).ln();
        let rhs = c.gamma.ln() * c.lambda().ln();
        return Err(Error::Hypothesis(format!(
            "K-condition fails: log K * log(2L+1) = {lhs} is not below log(gamma) * log(lambda) = {rhs}"
        )));
    }
    let log_drift = (2.0 * c.l + 1.0).ln();
    let lower = if c.gamma == 0.0 || log_drift == 0.0 {
        0.0
    } else {
        log_drift / (log_drift - c.gamma.ln())
    };
    let log_lambda = c.lambda().ln();
    let upper = if c.k <= 1.0 {
        1.0
    } else {
        -log_lambda / (c.k.ln() - log_lambda)
    };
    if !(lower < upper) {
        return Err(Error::EmptyInterval { lower, upper });
    }
    Ok((lower, upper))
}

fn interpolate(base_r: f64, base_rest: f64, r: f64) -> f64 {
    // 0^r = 0 for r > 0, including K = 0.
    if base_r == 0.0 {
        return 0.0;
    }
    base_r.powf(r) * base_rest.powf(1.0 - r)
}

/// Rate for the constant conditions at exponent `r`.
pub fn rho_r_standard(c: &StandardConditions, r: f64) -> Result<RateBound> {
    c.validate()?;
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::range(format!("r must lie in (0, 1), got {r}")));
    }
    let on_set = interpolate(c.gamma, 2.0 * c.l + 1.0, r);
    let off_set = interpolate(c.k, c.lambda(), r);
    let rho = on_set.max(off_set);
    let in_interval = match r_interval_standard(c) {
        Ok((lo, hi)) => lo < r && r < hi,
        Err(_) => false,
    };
    Ok(RateBound {
        rho,
        r,
        valid: rho < 1.0 && in_interval,
    })
}

/// Prefactor `a ((eta + 1) mu V + L + 1) / (1 - rho)` for an initial law with
/// `mu V = mu_v`.
pub fn prefactor_standard(c: &StandardConditions, mu_v: f64, rho: f64) -> Result<GeometricBound> {
    c.validate()?;
    if !(mu_v >= 0.0) || !mu_v.is_finite() {
        return Err(Error::range(format!(
            "mu V must be finite and nonnegative, got {mu_v}"
        )));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::range(format!("rho must lie in [0, 1), got {rho}")));
    }
    let prefactor = c.a * ((c.eta + 1.0) * mu_v + c.l + 1.0) / (1.0 - rho);
    Ok(GeometricBound {
        prefactor,
        rho,
        n_offset: 0,
    })
}

/// Continuous-time bound `b * prefactor * rho^floor(t / t_star)`.
pub fn continuous_bound(discrete: &GeometricBound, b: f64, t_star: f64, t: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&discrete.rho) {
        return Err(Error::range(format!(
            "rho must lie in [0, 1), got {}",
            discrete.rho
        )));
    }
    if !(b >= 0.0) || !(t_star > 0.0) || !(t >= 0.0) {
        return Err(Error::domain(format!(
            "need b >= 0, t* > 0, t >= 0; got b = {b}, t* = {t_star}, t = {t}"
        )));
    }
    let periods = (t / t_star).floor();
    Ok(b * discrete.prefactor * discrete.rho.powf(periods))
}

/// Parameters of the Durmus–Moulines drift and contraction conditions
/// (drift function bounded below by 1, metric bounded by 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DMConditions {
    pub eta_p: f64,
    #[serde(rename = "L_p")]
    pub l_p: f64,
    pub gamma_p: f64,
    pub delta_p: f64,
}

impl DMConditions {
    pub fn new(eta_p: f64, l_p: f64, gamma_p: f64, delta_p: f64) -> Result<Self> {
        let c = DMConditions {
            eta_p,
            l_p,
            gamma_p,
            delta_p,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eta_p) {
            return Err(Error::domain(format!(
                "eta' must lie in [0, 1), got {}",
                self.eta_p
            )));
        }
        if !(self.gamma_p > 0.0 && self.gamma_p < 1.0) {
            return Err(Error::domain(format!(
                "gamma' must lie in (0, 1), got {}",
                self.gamma_p
            )));
        }
        if !(self.delta_p > 0.0) || !self.delta_p.is_finite() {
            return Err(Error::domain(format!(
                "delta' must be positive, got {}",
                self.delta_p
            )));
        }
        if !(self.l_p >= 1.0 - self.eta_p) || !self.l_p.is_finite() {
            return Err(Error::domain(format!(
                "L' = {} must be at least 1 - eta' = {} since the drift function is >= 1",
                self.l_p,
                1.0 - self.eta_p
            )));
        }
        Ok(())
    }

    /// The pair `(lambda, J)` entering the Durmus–Moulines rate.
    pub fn lambda_j(&self) -> (f64, f64) {
        let two_l = 2.0 * self.l_p;
        let lambda = two_l * (1.0 - self.eta_p) / (two_l + self.delta_p) + self.eta_p;
        let j = (two_l + self.delta_p) / (1.0 - self.eta_p) + two_l / lambda;
        (lambda, j)
    }

    /// Equivalent constant conditions with `V = Vbar - 1/2`, `a = 1`, `K = 1`.
    pub fn to_standard(&self) -> Result<StandardConditions> {
        self.validate()?;
        let eta = self.eta_p;
        let l = self.l_p + eta / 2.0 - 0.5;
        let d = (2.0 * l + self.delta_p) / (1.0 - eta);
        StandardConditions::new(1.0, eta, l, self.gamma_p, 1.0, d)
    }
}

/// The Durmus–Moulines rate `exp(-log lambda log gamma' / (log J - log gamma'))`.
///
/// The returned `r` is the equivalent exponent with `rho = lambda^(1 - r)`.
pub fn rho_dm(c: &DMConditions) -> Result<RateBound> {
    c.validate()?;
    let (lambda, j) = c.lambda_j();
    debug_assert!(lambda > c.eta_p && lambda < 1.0 && j > 1.0);
    let log_gamma = c.gamma_p.ln();
    let denom = j.ln() - log_gamma;
    let rho = (-(lambda.ln() * log_gamma) / denom).exp();
    let r = j.ln() / denom;
    Ok(RateBound {
        rho,
        r,
        valid: rho < 1.0,
    })
}

/// The rate obtained by recasting the Durmus–Moulines conditions as constant
/// conditions and choosing `r` where both branches of `rho_r` coincide.
pub fn dm_improved_rate(c: &DMConditions) -> Result<RateBound> {
    let standard = c.to_standard()?;
    let lambda = standard.lambda();
    let log_drift = (2.0 * standard.l + 1.0).ln();
    let log_lambda = lambda.ln();
    let r = (log_drift - log_lambda) / (log_drift - log_lambda - standard.gamma.ln());
    let rho = lambda.powf(1.0 - r);
    let in_interval = r_interval_standard(&standard)
        .map(|(lo, hi)| lo < r && r < hi)
        .unwrap_or(false);
    Ok(RateBound {
        rho,
        r,
        valid: rho < 1.0 && in_interval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn toy() -> StandardConditions {
        StandardConditions::new(1.0, 0.0, 0.0, 0.5, 1.0, 3.0).unwrap()
    }

    #[test]
    fn lambda_examples() {
        assert_abs_diff_eq!(
            lambda_of_d(0.5, 1.5, 9.2).unwrap(),
            8.6 / 10.2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(lambda_of_d(0.0, 0.0, 3.0).unwrap(), 0.25, epsilon = 1e-15);
        assert!(matches!(lambda_of_d(0.5, 1.5, 6.0), Err(Error::Domain(_))));
    }

    #[test]
    fn lambda_decreasing_in_d() {
        for &(eta, l) in &[(0.0, 0.0), (0.5, 1.5), (0.9, 0.1), (0.2, 3.0)] {
            let start = 2.0 * l / (1.0 - eta) + 1e-3;
            let mut prev = f64::INFINITY;
            for i in 0..500 {
                let d = start + i as f64 * 0.1;
                let lam = lambda_of_d(eta, l, d).unwrap();
                assert!(lam < 1.0);
                assert!(lam < prev, "eta={eta} L={l} d={d}");
                prev = lam;
            }
        }
    }

    #[test]
    fn rho_standard_toy() {
        let b = rho_r_standard(&toy(), 0.5).unwrap();
        assert_abs_diff_eq!(b.rho, 0.5f64.sqrt(), epsilon = 1e-12);
        assert!(b.valid);
    }

    #[test]
    fn rho_standard_zero_l() {
        // L = 0 and gamma = K = lambda: the first branch gamma^r dominates.
        let c = StandardConditions::new(1.0, 0.0, 0.0, 0.25, 0.25, 3.0).unwrap();
        for r in [0.1, 0.5, 0.9] {
            assert_abs_diff_eq!(
                rho_r_standard(&c, r).unwrap().rho,
                0.25f64.powf(r),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn rho_standard_rejects_bad_r() {
        assert!(matches!(rho_r_standard(&toy(), 0.0), Err(Error::Range(_))));
        assert!(matches!(rho_r_standard(&toy(), 1.0), Err(Error::Range(_))));
    }

    #[test]
    fn interval_examples() {
        assert_eq!(r_interval_standard(&toy()).unwrap(), (0.0, 1.0));

        let c = StandardConditions::new(1.0, 0.5, 1.5, 0.971, 1.0, 9.2).unwrap();
        let (lo, hi) = r_interval_standard(&c).unwrap();
        assert_abs_diff_eq!(lo, 0.979_212_877_717_348_6, epsilon = 1e-12);
        assert_eq!(hi, 1.0);

        let near_one = StandardConditions::new(1.0, 0.5, 1.5, 1.0 - 1e-9, 1.0, 9.2).unwrap();
        let (lo, _) = r_interval_standard(&near_one).unwrap();
        assert!(lo > 1.0 - 1e-8);
    }

    #[test]
    fn interval_upper_for_large_k() {
        let c = StandardConditions::new(1.0, 0.0, 0.0, 0.5, 2.0, 3.0).unwrap();
        let (lo, hi) = r_interval_standard(&c).unwrap();
        assert_eq!(lo, 0.0);
        // -log(1/4) / (log 2 - log(1/4)) = 2 / 3
        assert_abs_diff_eq!(hi, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn a3_examples() {
        let k1 = StandardConditions::new(1.0, 0.5, 1.5, 0.9, 1.0, 9.2).unwrap();
        assert!(check_a3(&k1).unwrap());
        let bad = StandardConditions::new(1.0, 0.5, 1.5, 0.9, 100.0, 9.2).unwrap();
        assert!(!check_a3(&bad).unwrap());
        assert!(matches!(
            r_interval_standard(&bad),
            Err(Error::Hypothesis(_))
        ));
        assert!(!rho_r_standard(&bad, 0.5).unwrap().valid);
        let ok = StandardConditions::new(1.0, 0.0, 0.0, 0.5, 2.0, 3.0).unwrap();
        assert!(check_a3(&ok).unwrap());
    }

    #[test]
    fn prefactor_examples() {
        let c = StandardConditions::new(1.0, 0.5, 1.5, 0.5, 1.0, 9.2).unwrap();
        let g = prefactor_standard(&c, 9.0, 0.976).unwrap();
        assert_abs_diff_eq!(g.prefactor, 16.0 / 0.024, epsilon = 1e-9);

        let g = prefactor_standard(&toy(), 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(g.prefactor, 1.0, epsilon = 1e-15);

        let c2 = StandardConditions { a: 2.0, ..c };
        let g = prefactor_standard(&c2, 0.0, 0.5).unwrap();
        assert_abs_diff_eq!(g.prefactor, 10.0, epsilon = 1e-12);

        assert!(matches!(
            prefactor_standard(&c, 1.0, 1.0),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn continuous_examples() {
        let g = GeometricBound {
            prefactor: 10.0,
            rho: 0.5,
            n_offset: 0,
        };
        assert_abs_diff_eq!(
            continuous_bound(&g, 1.0, 1.0, 2.5).unwrap(),
            2.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            continuous_bound(&g, 3.0, 1.0, 0.0).unwrap(),
            30.0,
            epsilon = 1e-12
        );
        assert_eq!(continuous_bound(&g, 0.0, 1.0, 7.0).unwrap(), 0.0);
        assert!(continuous_bound(&g, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn dm_worked_tuple() {
        let c = DMConditions::new(0.5, 1.5, 0.5, 1.0).unwrap();
        let (lambda, j) = c.lambda_j();
        assert_abs_diff_eq!(lambda, 0.875, epsilon = 1e-15);
        assert_abs_diff_eq!(j, 8.0 + 24.0 / 7.0, epsilon = 1e-12);
        let dm = rho_dm(&c).unwrap();
        assert_abs_diff_eq!(dm.rho, 0.970_855_288_344_834_9, epsilon = 1e-12);

        let improved = dm_improved_rate(&c).unwrap();
        assert_abs_diff_eq!(improved.r, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(improved.rho, 0.956_465_591_386_194_6, epsilon = 1e-12);
        assert!(improved.valid);
        assert!(improved.rho < dm.rho);

        let standard = c.to_standard().unwrap();
        assert_abs_diff_eq!(standard.l, 1.25, epsilon = 1e-15);
        let (lo, hi) = r_interval_standard(&standard).unwrap();
        assert!(lo < improved.r && improved.r < hi);
        // Both branches of rho_r agree at the chosen exponent.
        let direct = rho_r_standard(&standard, improved.r).unwrap();
        assert_abs_diff_eq!(direct.rho, improved.rho, epsilon = 1e-12);
    }

    #[test]
    fn dm_rejects_small_drift_offset() {
        assert!(matches!(
            DMConditions::new(0.5, 0.4, 0.5, 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn dm_rate_tends_to_one() {
        let c = DMConditions::new(0.5, 1.5, 1.0 - 1e-9, 1.0).unwrap();
        let rho = rho_dm(&c).unwrap().rho;
        assert!(rho < 1.0 && rho > 1.0 - 1e-8);
    }

    fn arb_standard() -> impl Strategy<Value = StandardConditions> {
        (
            0.0..0.99f64,
            0.0..5.0f64,
            0.0..0.99f64,
            0.0..1.0f64,
            1e-3..50.0f64,
        )
            .prop_map(|(eta, l, gamma, k, slack)| StandardConditions {
                a: 1.0,
                eta,
                l,
                gamma,
                k,
                d: 2.0 * l / (1.0 - eta) + slack,
            })
    }

    proptest! {
        #[test]
        fn admissible_r_gives_rate_below_one(c in arb_standard(), t in 0.01..0.99f64) {
            let (lo, hi) = r_interval_standard(&c).unwrap();
            let r = lo + t * (hi - lo);
            prop_assume!(r > lo && r < hi && r > 0.0);
            let b = rho_r_standard(&c, r).unwrap();
            prop_assert!(b.rho < 1.0);
            prop_assert!(b.valid);
        }

        #[test]
        fn rho_continuous_in_r(c in arb_standard()) {
            // Each branch A^r B^(1-r) has |derivative| <= max(A, B) |log A - log B|.
            let branch_slope = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a.max(b) * (a.ln() - b.ln()).abs() };
            let slope = branch_slope(c.gamma, 2.0 * c.l + 1.0).max(branch_slope(c.k, c.lambda()));
            let h = 1e-3;
            let mut prev = rho_r_standard(&c, 0.01).unwrap().rho;
            let mut r = 0.01 + h;
            while r < 0.99 {
                let cur = rho_r_standard(&c, r).unwrap().rho;
                prop_assert!((cur - prev).abs() <= slope * h * (1.0 + 1e-9) + 1e-12);
                prev = cur;
                r += h;
            }
        }

        #[test]
        fn continuous_bound_nonincreasing(pref in 0.0..100.0f64, rho in 0.0..0.999f64,
                                          b in 0.0..5.0f64, t_star in 0.01..3.0f64) {
            let g = GeometricBound { prefactor: pref, rho, n_offset: 0 };
            let mut prev = f64::INFINITY;
            for i in 0..200 {
                let v = continuous_bound(&g, b, t_star, i as f64 * 0.05).unwrap();
                prop_assert!(v <= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn dm_improvement_on_random_draws() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let eta_p = rng.random_range(0.0..0.99);
            let l_p = (1.0 - eta_p) + rng.random_range(0.0..10.0);
            let gamma_p = rng.random_range(0.01..0.99);
            let delta_p = rng.random_range(0.01..10.0);
            let c = DMConditions::new(eta_p, l_p, gamma_p, delta_p).unwrap();
            let dm = rho_dm(&c).unwrap();
            let better = dm_improved_rate(&c).unwrap();
            assert!(better.rho < dm.rho, "{c:?}: {} vs {}", better.rho, dm.rho);
        }
    }
}
