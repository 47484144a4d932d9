//! Hand-rolled special functions checked against statrs.

use eyecurate_core::stats::{ln_gamma, one_sample_t, reg_inc_beta, student_t_cdf, student_t_two_sided};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::{beta::beta_reg, gamma::ln_gamma as sr_ln_gamma};

proptest! {
    #[test]
    fn ln_gamma_matches(x in 0.01..200.0f64) {
        let (a, b) = (ln_gamma(x), sr_ln_gamma(x));
        prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{x}: {a} vs {b}");
    }

    #[test]
    fn incomplete_beta_matches(a in 0.1..50.0f64, b in 0.1..50.0f64, x in 0.0..=1.0f64) {
        let (u, v) = (reg_inc_beta(a, b, x), beta_reg(a, b, x));
        prop_assert!((u - v).abs() <= 1e-10, "I_{x}({a}, {b}): {u} vs {v}");
    }

    #[test]
    fn student_t_matches(t in -30.0..30.0f64, df in 1u32..200) {
        let d = StudentsT::new(0.0, 1.0, df as f64).unwrap();
        let cdf = d.cdf(t);
        prop_assert!((student_t_cdf(t, df as f64) - cdf).abs() <= 1e-10);
        let two = 2.0 * d.cdf(-t.abs());
        prop_assert!((student_t_two_sided(t, df as f64) - two).abs() <= 1e-10);
    }

    #[test]
    fn one_sample_p_matches(v in prop::collection::vec(-3.0..3.0f64, 2..30), mu in -1.0..1.0f64) {
        let r = one_sample_t(&v, mu);
        prop_assume!(r.t.is_finite());
        let d = StudentsT::new(0.0, 1.0, r.df).unwrap();
        prop_assert!((r.p - 2.0 * d.cdf(-r.t.abs())).abs() <= 1e-10);
    }
}
