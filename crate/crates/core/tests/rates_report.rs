use parint_core::rates::{gap_exponent, regime_report, theory_envelopes};
use parint_core::{Error, Exponent, ProblemSpec, Rational};

fn spec(r: u32, p: Option<i64>, q: Option<i64>, d1: u32, d2: u32) -> ProblemSpec {
    ProblemSpec::from_ints(r, p, q, d1, d2).unwrap()
}

#[test]
fn report_json_field_names_are_stable() {
    let v = serde_json::to_value(regime_report(&spec(1, Some(4), None, 1, 1)).unwrap()).unwrap();
    let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    for k in [
        "spec",
        "p_bar",
        "sigma1",
        "beta1",
        "beta2",
        "sigma2",
        "embedded",
        "solvable",
        "compact",
        "phi1_branch",
        "phi1_exponent",
        "phi2_branch",
        "phi2_exponent",
        "det_exponent",
        "theta",
        "theta_exact",
    ] {
        assert!(keys.contains(&k), "missing {k}");
    }
    assert_eq!(v["theta"], 0.125);
    assert_eq!(v["spec"]["q"], "inf");
}

#[test]
fn basic_case_flags() {
    let r = regime_report(&spec(1, Some(2), Some(2), 1, 1)).unwrap();
    assert_eq!((r.sigma1, r.beta1), (0, 0));
    assert_eq!(r.phi1_exponent, "-3/4");
    assert!(r.theta.is_none());
}

#[test]
fn unsolvable_spec_is_rejected() {
    let s = ProblemSpec::new(1, Exponent::integer(1), Exponent::integer(2), 4, 1).unwrap();
    assert!(matches!(regime_report(&s), Err(Error::NotSolvable { .. })));
}

#[test]
fn speedup_vanishes_at_low_smoothness() {
    assert_eq!(gap_exponent(&spec(1, Some(3), Some(4), 2, 1)).unwrap(), Rational::from_integer(0));
}

#[test]
fn adaptive_upper_envelope_beats_non_adaptive_lower_envelope_eventually() {
    let s = spec(1, Some(4), None, 1, 1);
    let e = theory_envelopes(2f64.powi(200), &s).unwrap();
    assert!(e.ran_upper.unwrap() < e.ran_non_lower);
    assert!(e.ran_lower.unwrap() <= e.ran_upper.unwrap());
    // r > (d1 + d2)/p, so the deterministic envelope exists too.
    assert!(e.det.is_some());
}
