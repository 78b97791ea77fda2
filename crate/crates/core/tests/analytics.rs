use langevin_core::friction::FrictionSpec;
use langevin_core::gaussian::{diagonal_system_rate, ou_fitted_rate_full_periods, ou_rate_closed_form};
use langevin_core::rate_bounds::log_grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn fitted_rates_on_log_grid() {
    let mut worst: f64 = 0.0;
    for &w in &log_grid(0.2, 5.0, 10) {
        for &lambda in &log_grid(0.1, 10.0, 10) {
            let exact = ou_rate_closed_form(w, lambda);
            let fitted = ou_fitted_rate_full_periods(w, lambda).unwrap();
            let rel = ((fitted - exact) / exact).abs();
            worst = worst.max(rel);
            assert!(rel < 0.05, "w={w} lambda={lambda}: {fitted} vs {exact}");
        }
    }
    println!("worst relative fit error {worst:.3e}");
}

#[test]
fn hessian_friction_dominates_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..20 {
        let d = rng.random_range(1..6);
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..5.0)).collect();
        let vmax = v.iter().cloned().fold(0.0, f64::max);
        let hess = diagonal_system_rate(&v, &FrictionSpec::HessianSqrt { s: 2.0 }).unwrap();
        for lambda in log_grid(0.1, 10.0 * vmax, 200) {
            let r = diagonal_system_rate(&v, &FrictionSpec::ConstantScalar { lambda }).unwrap();
            assert!(hess >= r - 1e-12, "{v:?} {lambda}");
        }
    }
}
