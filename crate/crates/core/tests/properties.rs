use proptest::prelude::*;

use rician_core::channel::ChannelParams;
use rician_core::optimizer::{error_exponent, optimize_distribution, OptimizerConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn converged_optima_are_certified(k in 0.0f64..5.0, alpha in 0.01f64..2.0, rho in 0.2f64..1.0) {
        let cp = ChannelParams::new(k, alpha).unwrap();
        let res = optimize_distribution(rho, &cp, &OptimizerConfig::default()).unwrap();
        prop_assert!(res.converged, "K={k} alpha={alpha} rho={rho}");
        prop_assert!(res.kkt.is_optimal());
        let total: f64 = res.dist.probabilities().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(res.dist.average_power() <= alpha + 1e-9);
        prop_assert!(res.e0 >= 0.0);
        prop_assert!(res.e0 <= -res.t_value.ln() + 1e-12);
    }

    #[test]
    fn exponent_is_nonincreasing_in_rate(k in 0.5f64..4.0, alpha in 0.2f64..2.0, r1 in 0.0f64..0.3, dr in 0.0f64..0.2) {
        let cp = ChannelParams::new(k, alpha).unwrap();
        let cfg = OptimizerConfig::default();
        let lo = error_exponent(r1, &cp, &cfg).unwrap();
        let hi = error_exponent(r1 + dr, &cp, &cfg).unwrap();
        prop_assert!(hi.exponent <= lo.exponent + 1e-9);
        prop_assert!(hi.exponent >= 0.0);
    }
}

#[test]
fn peak_limit_is_respected() {
    for (k, alpha, kappa) in [(2.0, 1.0, 1.5), (2.0, 1.0, 2.0), (1.0, 0.5, 3.0)] {
        let cp = ChannelParams::with_peak(k, alpha, kappa).unwrap();
        let res = optimize_distribution(1.0, &cp, &OptimizerConfig::default()).unwrap();
        assert!(res.converged, "{k} {alpha} {kappa}");
        let peak = (kappa * alpha).sqrt();
        assert!(res.dist.max_amplitude() <= peak + 1e-12);
        assert!(res.dist.average_power() <= alpha + 1e-9);
    }
}
