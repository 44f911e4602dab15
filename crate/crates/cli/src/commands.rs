use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use driftrate::coupling::{
    check_curve_against_bound, simulate_curve, verify_psi_r_contraction, BoundCheck,
    ContractionReport, InitialState, SimConfig,
};
use driftrate::generalized::{
    evaluate_grid, optimize_r, optimize_standard_r, optimize_standard_rd, prefactor_generalized,
    r_interval_generalized, rho_r_generalized, sup_rate_field, GeneralizedSpec, Grid, GridSearch,
};
use driftrate::nar::{
    gamma_curve, nar_spec, standard_conditions_nar, AutoregressiveMap, FieldChoice, NARModel,
    TWO_PI_SQ,
};
use driftrate::rate::{
    check_a3, continuous_bound as continuous, dm_improved_rate, prefactor_standard,
    r_interval_standard, rho_dm, rho_r_standard, DMConditions, GeometricBound, RateBound,
    StandardConditions,
};

use crate::{
    Checks, CompareDmArgs, ContinuousArgs, Failure, GammaCurveArgs, GeneralizedArgs, StandardArgs,
    VerifyArgs,
};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

// CSV sink with an optional leading `# ...` comment line.
fn csv_writer(
    path: Option<&Path>,
    comment: Option<&str>,
) -> Result<csv::Writer<Box<dyn Write>>, Failure> {
    let mut sink: Box<dyn Write> = match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout()),
    };
    if let Some(c) = comment {
        writeln!(sink, "# {c}")?;
    }
    Ok(csv::Writer::from_writer(sink))
}

#[derive(Serialize)]
struct StandardReport {
    conditions: StandardConditions,
    bound: RateBound,
    r_interval: Option<(f64, f64)>,
    geometric: Option<GeometricBound>,
}

pub fn standard_bound(args: &StandardArgs) -> Result<(), Failure> {
    let conditions = if args.nar {
        if let Some(r) = args.r {
            return Err(Failure::Input(format!(
                "--nar optimizes r jointly with d; drop --r {r}"
            )));
        }
        optimize_standard_rd(
            |d| standard_conditions_nar(d, args.gamma_step),
            6.0 + 1e-9,
            TWO_PI_SQ - 1e-9,
            args.d_points,
            args.r_points,
        )?
        .conditions
    } else {
        let (Some(gamma), Some(d)) = (args.gamma, args.d) else {
            return Err(Failure::Input(
                "--gamma and --d are required unless --nar is given".into(),
            ));
        };
        StandardConditions::new(args.a, args.eta, args.l, gamma, args.k, d)?
    };
    if !check_a3(&conditions)? {
        // Reports the K-condition values.
        r_interval_standard(&conditions)?;
    }
    let bound = match args.r {
        Some(r) => rho_r_standard(&conditions, r)?,
        None => optimize_standard_r(&conditions, args.r_points)?,
    };
    let interval = r_interval_standard(&conditions).ok();
    let geometric = match args.mu_v {
        Some(mu_v) if bound.rho < 1.0 => Some(prefactor_standard(&conditions, mu_v, bound.rho)?),
        _ => None,
    };

    println!("rho = {:.6}", bound.rho);
    println!("r = {:.6}", bound.r);
    if args.nar {
        println!("d = {:.6}", conditions.d);
        println!("gamma = {:.6}", conditions.gamma);
    }
    println!("lambda = {:.6}", conditions.lambda());
    if let Some((lo, hi)) = interval {
        println!("r_interval = ({lo:.6}, {hi:.6})");
    }
    if let Some(g) = &geometric {
        println!("prefactor = {:.6}", g.prefactor);
    }
    println!("valid = {}", bound.valid);

    if let Some(path) = &args.json_out {
        write_json(
            path,
            &StandardReport {
                conditions,
                bound,
                r_interval: interval,
                geometric,
            },
        )?;
    }
    if !bound.valid {
        return Err(Failure::Hypothesis(match interval {
            Some((lo, hi)) => format!(
                "r = {} lies outside the admissible interval ({lo}, {hi})",
                bound.r
            ),
            None => "no admissible exponent".into(),
        }));
    }
    Ok(())
}

struct Resolved {
    spec: GeneralizedSpec,
    search: GridSearch,
    interval: (f64, f64),
    bound: RateBound,
}

fn default_step(field: FieldChoice) -> f64 {
    match field {
        FieldChoice::Loose => 0.02,
        FieldChoice::Tight => 0.05,
    }
}

fn resolve_rate(
    field: FieldChoice,
    c_tune: f64,
    r: Option<f64>,
    step: Option<f64>,
    levels: usize,
    top_k: usize,
    r_points: usize,
) -> Result<Resolved, Failure> {
    let spec = nar_spec(field, c_tune)?;
    let search = GridSearch {
        initial_step: step.unwrap_or_else(|| default_step(field)),
        levels,
        top_k,
    };
    spec.check_hypotheses(search.initial_step)?;
    let interval = r_interval_generalized(&spec, search.initial_step)?;
    let r = match r {
        Some(r) => r,
        None => {
            if r_points < 3 {
                return Err(Failure::Input(format!(
                    "--r-points must be at least 3, got {r_points}"
                )));
            }
            let (lo, hi) = (interval.0.max(1e-6), interval.1.min(1.0 - 1e-6));
            let rate = |r: f64| {
                rho_r_generalized(&spec, r, &search)
                    .map(|b| b.rho)
                    .unwrap_or(f64::INFINITY)
            };
            optimize_r(rate, lo, hi, r_points).0
        }
    };
    let bound = rho_r_generalized(&spec, r, &search)?;
    Ok(Resolved {
        spec,
        search,
        interval,
        bound,
    })
}

#[derive(Serialize)]
struct GeneralizedReport {
    field: FieldChoice,
    c_tune: f64,
    bound: RateBound,
    argmax: (f64, f64),
    grid_step: f64,
    r_interval: (f64, f64),
    geometric: Option<GeometricBound>,
}

pub fn generalized_bound(args: &GeneralizedArgs) -> Result<(), Failure> {
    let res = resolve_rate(
        args.field,
        args.c_tune,
        args.r,
        args.step,
        args.levels,
        args.top_k,
        args.r_points,
    )?;
    let sup = sup_rate_field(&res.spec, res.bound.r, &res.search)?;
    let geometric = match args.x0 {
        Some(x0) if res.bound.rho < 1.0 => {
            Some(prefactor_generalized(&res.spec, x0, res.bound.rho)?)
        }
        _ => None,
    };

    println!("rho = {:.6}", res.bound.rho);
    println!("r = {:.6}", res.bound.r);
    println!("argmax = ({:.6}, {:.6})", sup.argmax.0, sup.argmax.1);
    println!(
        "r_interval = ({:.6}, {:.6})",
        res.interval.0, res.interval.1
    );
    println!("grid_step = {}", sup.grid_step);
    if let Some(g) = &geometric {
        println!("prefactor = {:.6}", g.prefactor);
    }
    println!("valid = {}", res.bound.valid);

    if let Some(path) = &args.emit_grid {
        let field = res.spec.rate_field(res.bound.r);
        let grid = Grid::over(&res.spec.domain, res.search.initial_step)?;
        let values = evaluate_grid(&field, &res.spec.domain, &grid)?;
        let comment = format!(
            "fig1b: Gamma^r Lambda^(1-r), field = {}, c = {}, r = {}, step = {}",
            args.field, args.c_tune, res.bound.r, grid.step
        );
        let mut w = csv_writer(Some(path), Some(&comment))?;
        w.write_record(["x", "y", "value"])?;
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                let v = values[i * grid.ny + j];
                if v == f64::NEG_INFINITY {
                    continue;
                }
                let (x, y) = grid.point(i, j);
                w.serialize((x, y, v))?;
            }
        }
        w.flush()?;
    }
    if let Some(path) = &args.json_out {
        write_json(
            path,
            &GeneralizedReport {
                field: args.field,
                c_tune: args.c_tune,
                bound: res.bound,
                argmax: sup.argmax,
                grid_step: sup.grid_step,
                r_interval: res.interval,
                geometric,
            },
        )?;
    }
    if !res.bound.valid {
        return Err(Failure::Hypothesis(format!(
            "rho = {} is not below 1",
            res.bound.rho
        )));
    }
    Ok(())
}

pub fn fig_gamma_curve(args: &GammaCurveArgs) -> Result<(), Failure> {
    let points = match args.d_step {
        Some(h) if h > 0.0 => ((TWO_PI_SQ - 6.0) / h).round() as usize - 1,
        Some(h) => {
            return Err(Failure::Input(format!(
                "--d-step must be positive, got {h}"
            )))
        }
        None => args.points,
    };
    if points < 3 {
        return Err(Failure::Input(format!(
            "the sweep needs at least 3 levels inside (6, 2 pi^2), got {points}"
        )));
    }
    let curve = gamma_curve(points, args.grid_step)?;
    let mut w = csv_writer(
        args.out.as_deref(),
        Some("fig1a: sup of Gamma over the coupling set x^2 + y^2 < d"),
    )?;
    w.write_record(["d", "gamma"])?;
    for (d, g) in curve {
        w.serialize((d, g))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct DmRow {
    eta_p: f64,
    #[serde(rename = "L_p")]
    l_p: f64,
    gamma_p: f64,
    delta_p: f64,
    rho_dm: f64,
    rho_improved: f64,
    r_improved: f64,
    margin: f64,
}

fn random_dm(rng: &mut ChaCha8Rng) -> Result<DMConditions, Failure> {
    let eta_p = rng.random_range(0.0..0.99);
    let l_p = (1.0 - eta_p) + rng.random_range(0.0..10.0);
    let gamma_p = rng.random_range(0.01..0.99);
    let delta_p = rng.random_range(0.01..10.0);
    Ok(DMConditions::new(eta_p, l_p, gamma_p, delta_p)?)
}

pub fn compare_dm(args: &CompareDmArgs) -> Result<(), Failure> {
    let single = [args.eta_p, args.l_p, args.gamma_p, args.delta_p];
    let conditions: Vec<DMConditions> = match (args.batch, single) {
        (Some(_), s) if s.iter().any(Option::is_some) => {
            return Err(Failure::Input(
                "give either --batch or a single parameter set".into(),
            ));
        }
        (Some(n), _) => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (0..n)
                .map(|_| random_dm(&mut rng))
                .collect::<Result<_, _>>()?
        }
        (None, [Some(e), Some(l), Some(g), Some(d)]) => vec![DMConditions::new(e, l, g, d)?],
        (None, _) => {
            return Err(Failure::Input(
                "need --eta-p, --L-p, --gamma-p and --delta-p, or --batch N".into(),
            ));
        }
    };
    let mut rows = Vec::with_capacity(conditions.len());
    for c in &conditions {
        let dm = rho_dm(c)?;
        let improved = dm_improved_rate(c)?;
        rows.push(DmRow {
            eta_p: c.eta_p,
            l_p: c.l_p,
            gamma_p: c.gamma_p,
            delta_p: c.delta_p,
            rho_dm: dm.rho,
            rho_improved: improved.rho,
            r_improved: improved.r,
            margin: dm.rho - improved.rho,
        });
    }

    println!(
        "{:>9} {:>9} {:>9} {:>9} {:>11} {:>11} {:>11}",
        "eta_p", "L_p", "gamma_p", "delta_p", "rho_dm", "rho_improved", "margin"
    );
    for r in &rows {
        println!(
            "{:>9.5} {:>9.5} {:>9.5} {:>9.5} {:>11.7} {:>11.7} {:>11.3e}",
            r.eta_p, r.l_p, r.gamma_p, r.delta_p, r.rho_dm, r.rho_improved, r.margin
        );
    }
    if let Some(path) = &args.out {
        let mut w = csv_writer(Some(path), None)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    let failures = rows.iter().filter(|r| !(r.margin > 0.0)).count();
    if failures > 0 {
        return Err(Failure::Verification(format!(
            "{failures} of {} rows show no strict improvement",
            rows.len()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    step: usize,
    estimate: f64,
    stderr: f64,
    bound_value: f64,
}

fn pair_sample(
    spec: &GeneralizedSpec,
    n: usize,
    half_width: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>, Failure> {
    if !(half_width > 0.0) {
        return Err(Failure::Input(format!(
            "--pair-half-width must be positive, got {half_width}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Disjoint from the streams used for the noise.
    rng.set_stream(u64::MAX);
    let mut pairs = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while pairs.len() < n {
        let (x, y) = (
            rng.random_range(-half_width..=half_width),
            rng.random_range(-half_width..=half_width),
        );
        if spec.domain.contains(x, y) {
            pairs.push((x, y));
        }
        attempts += 1;
        if attempts > 1000 * n.max(1) {
            return Err(Failure::Input("pair square barely meets the domain".into()));
        }
    }
    Ok(pairs)
}

fn report_curve(check: &BoundCheck) {
    let worst = check
        .steps
        .iter()
        .map(|s| {
            if s.bound > 0.0 {
                s.estimate / s.bound
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let failing: Vec<usize> = check
        .steps
        .iter()
        .filter(|s| !s.pass)
        .map(|s| s.step)
        .collect();
    println!(
        "curve: {}/{} steps within bound + 3 se (largest estimate/bound {worst:.4})",
        check.steps.len() - failing.len(),
        check.steps.len()
    );
    if !failing.is_empty() {
        println!("curve: failing steps {failing:?}");
    }
}

fn report_contraction(report: &ContractionReport) {
    let passing = report.pairs.iter().filter(|c| c.pass).count();
    let worst = report
        .pairs
        .iter()
        .min_by(|a, b| a.margin.total_cmp(&b.margin));
    println!(
        "contraction: {passing}/{} pairs satisfy E psi_r(X1, Y1) <= rho psi_r(x, y) + 3 se",
        report.pairs.len()
    );
    if let Some(w) = worst {
        println!(
            "contraction: smallest margin {:.4e} at ({:.4}, {:.4})",
            w.margin, w.x, w.y
        );
    }
}

pub fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let (spec, r, rho) = match (args.r, args.rho) {
        (Some(r), Some(rho)) => (nar_spec(args.field, args.c_tune)?, r, rho),
        _ => {
            let res = resolve_rate(
                args.field,
                args.c_tune,
                args.r,
                args.step,
                args.levels,
                args.top_k,
                args.r_points,
            )?;
            let rho = args.rho.unwrap_or(res.bound.rho);
            (res.spec, res.bound.r, rho)
        }
    };
    if !(0.0..1.0).contains(&rho) {
        return Err(Failure::Input(format!("rho must lie in [0, 1), got {rho}")));
    }
    let model = NARModel::new(1, args.c_tune, AutoregressiveMap::PerturbedSine)?;
    println!("field = {}, r = {r:.6}, rho = {rho:.6}", args.field);
    let mut passed = true;

    if matches!(args.check, Checks::Curve | Checks::Both) {
        let cfg = SimConfig {
            model,
            x0: vec![args.x0],
            y0: match args.y0 {
                Some(y) => InitialState::Fixed(vec![y]),
                None => InitialState::Stationary,
            },
            n_steps: args.n_steps,
            n_replicas: args.n_replicas,
            seed: args.seed,
            burn_in: args.burn_in,
        };
        let curve = simulate_curve(&cfg)?;
        let bound = prefactor_generalized(&spec, args.x0, rho)?;
        println!("bound: {:.6} * {rho:.6}^n", bound.prefactor);
        let check = check_curve_against_bound(&curve, &bound, 3.0);
        report_curve(&check);
        passed &= check.passed;
        if let Some(path) = &args.out {
            let mut w = csv_writer(Some(path), None)?;
            for s in &check.steps {
                w.serialize(CurveRow {
                    step: s.step,
                    estimate: s.estimate,
                    stderr: s.standard_error,
                    bound_value: s.bound,
                })?;
            }
            w.flush()?;
        }
    }
    if matches!(args.check, Checks::Contraction | Checks::Both) {
        let pairs = pair_sample(&spec, args.pairs, args.pair_half_width, args.seed)?;
        let report =
            verify_psi_r_contraction(&model, &spec, r, rho, &pairs, args.n_noise, args.seed)?;
        report_contraction(&report);
        passed &= report.passed;
    }
    println!("result = {}", if passed { "pass" } else { "fail" });
    if passed {
        Ok(())
    } else {
        Err(Failure::Verification("bound check failed".into()))
    }
}

pub fn continuous_bound(args: &ContinuousArgs) -> Result<(), Failure> {
    let (Some(prefactor), Some(rho)) = (args.prefactor, args.rho) else {
        return Err(Failure::Input("--prefactor and --rho are required".into()));
    };
    if args.t.is_empty() {
        return Err(Failure::Input("give at least one time with --t".into()));
    }
    let discrete = GeometricBound {
        prefactor,
        rho,
        n_offset: 0,
    };
    let values = args
        .t
        .iter()
        .map(|&t| continuous(&discrete, args.b, args.t_star, t).map(|v| (t, v)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut w = csv_writer(None, None)?;
    w.write_record(["t", "bound"])?;
    for row in values {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
