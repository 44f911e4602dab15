use driftrate::coupling::{
    simulate_curve, simulate_curves, verify_psi_r_contraction, InitialState, SimConfig,
};
use driftrate::generalized::{rho_r_generalized, GridSearch};
use driftrate::nar::{nar_spec, FieldChoice, NARModel, TWO_PI_SQ};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loose_pairs(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rad = TWO_PI_SQ.sqrt();
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let (x, y): (f64, f64) = (rng.random_range(-rad..rad), rng.random_range(-rad..rad));
        if x * x + y * y <= TWO_PI_SQ {
            pairs.push((x, y));
        }
    }
    pairs
}

#[test]
fn loose_contraction_holds_and_halved_rate_fails() {
    let spec = nar_spec(FieldChoice::Loose, 1.0).unwrap();
    let rho = rho_r_generalized(&spec, 0.395, &GridSearch::new(0.05, 4))
        .unwrap()
        .rho;
    assert!((rho - 0.814).abs() < 0.005);
    let model = NARModel::default();
    let pairs = loose_pairs(50, 21);
    let report = verify_psi_r_contraction(&model, &spec, 0.395, rho, &pairs, 100_000, 4).unwrap();
    assert!(report.passed, "{:?}", report.pairs.iter().find(|c| !c.pass));
    let control =
        verify_psi_r_contraction(&model, &spec, 0.395, rho / 2.0, &pairs, 100_000, 4).unwrap();
    assert!(!control.passed);
}

#[test]
fn bit_identical_reruns() {
    let cfg = SimConfig {
        model: NARModel::default(),
        x0: vec![3.0],
        y0: InitialState::Stationary,
        n_steps: 25,
        n_replicas: 5_000,
        seed: 77,
        burn_in: 1_000,
    };
    let a = simulate_curves(&cfg).unwrap();
    let b = simulate_curves(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.coupling, simulate_curve(&cfg).unwrap());
    let mut other = cfg.clone();
    other.seed = 78;
    assert_ne!(simulate_curve(&other).unwrap(), a.coupling);
}

#[test]
fn config_json_round_trip() {
    let cfg = SimConfig {
        model: NARModel::default(),
        x0: vec![1.0],
        y0: InitialState::Fixed(vec![-2.0]),
        n_steps: 4,
        n_replicas: 10,
        seed: 3,
        burn_in: 0,
    };
    let text = serde_json::to_string(&cfg).unwrap();
    let back: SimConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(
        simulate_curve(&back).unwrap(),
        simulate_curve(&cfg).unwrap()
    );
}
