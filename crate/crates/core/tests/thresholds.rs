use scse::thresholds::{
    find_alpha_bp, minimize_effective_alpha, run_spec, seed_boundary, ThresholdKind, DEFAULT_TOL,
};
use scse::{CouplingSpec, ShapeFunction, StopRule};

/// Spinodal of the single system at rho=0.4, Delta=1e-12, frozen from
/// `spinodal_scan` below.
const ALPHA_BP_04: f64 = 0.589_246_001_1;

fn mmse_trapezoid(rho: f64, qhat: f64) -> f64 {
    let (n, zmax) = (20_000, 12.0);
    let h = zmax / n as f64;
    let f = |z: f64| {
        let den = rho + (1.0 - rho) * (1.0 + qhat).sqrt() * (-z * z * qhat / 2.0).exp();
        z * z * (-z * z / 2.0).exp() / den
    };
    let inner: f64 = (1..n).map(|k| f(k as f64 * h)).sum();
    let g = 2.0 * h * (inner + 0.5 * (f(0.0) + f(zmax))) / (2.0 * std::f64::consts::PI).sqrt();
    rho - rho * rho * qhat / (qhat + 1.0) * g
}

/// A fixed point E = mmse(alpha/(Delta+E)) exists at precision qhat iff
/// alpha = qhat (Delta + mmse(qhat)); the bad branch disappears at the local
/// maximum of that curve.
fn spinodal_scan(rho: f64, delta: f64) -> f64 {
    let alpha = |lq: f64| {
        let q = 10f64.powf(lq);
        q * (delta + mmse_trapezoid(rho, q))
    };
    let (mut best_lq, mut best) = (0.0, f64::MIN);
    let n = 3000;
    for k in 0..=n {
        let lq = -2.0 + 5.0 * k as f64 / n as f64;
        let a = alpha(lq);
        if a > best {
            best = a;
            best_lq = lq;
        }
    }
    // golden-section polish of the grid maximum
    let (mut lo, mut hi) = (best_lq - 5.0 / n as f64, best_lq + 5.0 / n as f64);
    for _ in 0..60 {
        let m1 = hi - 0.618_033_988_75 * (hi - lo);
        let m2 = lo + 0.618_033_988_75 * (hi - lo);
        if alpha(m1) < alpha(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    alpha(0.5 * (lo + hi))
}

#[test]
fn alpha_bp_matches_spinodal_oracle() {
    let oracle = spinodal_scan(0.4, 1e-12);
    println!("spinodal oracle {oracle:.10}");
    assert!((oracle - ALPHA_BP_04).abs() < 1e-6, "oracle {oracle} vs frozen {ALPHA_BP_04}");
    let r = find_alpha_bp(0.4, 1e-12, DEFAULT_TOL).unwrap();
    assert_eq!(r.kind, ThresholdKind::Bp);
    // the finite iteration cap can only push the measured value up
    assert!(r.bracket.1 >= ALPHA_BP_04 && r.bracket.0 <= ALPHA_BP_04 + 2e-3, "{:?}", r.bracket);
    assert!(r.bracket.1 - r.bracket.0 <= DEFAULT_TOL);
}

#[test]
fn bracket_ends_verify_post_hoc() {
    let r = find_alpha_bp(0.3, 1e-10, DEFAULT_TOL).unwrap();
    let single = |a: f64| CouplingSpec::new(1, 0, 0, a, a);
    let stop = StopRule::default();
    assert!(run_spec(&single(r.bracket.1), 0.3, 1e-10, &stop).unwrap().succeeded());
    assert!(!run_spec(&single(r.bracket.0), 0.3, 1e-10, &stop).unwrap().succeeded());
}

#[test]
fn seed_boundary_is_reproducible_and_optimum_frozen() {
    let run = || seed_boundary(0.4, 1e-12, 0.5, 1, 100, ShapeFunction::flat(), &[1, 2, 4, 8], DEFAULT_TOL).unwrap();
    let a = run();
    let b = run();
    assert_eq!(a, b);
    let best = minimize_effective_alpha(&a).unwrap();
    assert_eq!(best.w_s, 1);
    assert_eq!(best.alpha_s_star, 0.916_992_187_5);
    assert!((best.alpha_eff - 0.504_169_921_875).abs() < 1e-15);
}
