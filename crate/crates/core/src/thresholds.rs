//! Threshold location by bisection over state-evolution runs.
//!
//! * `alpha_bp`: uncoupled algorithmic threshold (single block, no coupling).
//! * `alpha_w`: coupled threshold at finite interaction range with a large,
//!   strong seed.
//! * `alpha_c` proxy: `alpha_w` at a wide range (`w = 16`, `L = 640`). It is an
//!   upper bound on the optimal threshold of the single system.
//!
//! Seed boundaries trace, for each seed size, the weakest seed ratio at which
//! the reconstruction wave sweeps the whole system.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{effective_alpha, CouplingSpec, ModelError, ProblemParams, ShapeFunction};
use crate::state_evolution::{
    propagation_speed, se_run, SEContext, SEOutcome, SeError, SeInit, SpeedEstimate, StopRule,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("bracket [{lo}, {hi}] is invalid: predicate is {lo_ok} at lo and {hi_ok} at hi")]
    Bracket { lo: f64, hi: f64, lo_ok: bool, hi_ok: bool },
    #[error("tolerance {0} must be positive")]
    Tolerance(f64),
    #[error("no propagating seed on the boundary")]
    EmptyBoundary,
    #[error(transparent)]
    StateEvolution(#[from] SeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Default bisection tolerance.
pub const DEFAULT_TOL: f64 = 5e-4;
/// Default number of blocks for coupled threshold hunting.
pub const DEFAULT_BLOCKS: usize = 240;
/// Interaction range and block count of the `alpha_c` proxy.
pub const CPROXY_RANGE: usize = 16;
pub const CPROXY_BLOCKS: usize = 40 * CPROXY_RANGE;
/// Upper end of the seed-ratio search.
pub const SEED_RATIO_MAX: f64 = 1.5;
/// Seed ratio used for threshold hunting.
pub const STRONG_SEED_RATIO: f64 = 1.0;

/// Fallback lower end of the `alpha_bp` bracket, relative to `rho`.
pub const BP_FALLBACK_LOWER: f64 = 0.9;

/// Seed size used for threshold hunting at range `w`.
pub fn strong_seed_size(w: usize) -> usize {
    4 * w + 8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdKind {
    #[serde(rename = "bp")]
    Bp,
    #[serde(rename = "w")]
    CoupledW,
    #[serde(rename = "cproxy")]
    CProxy,
}

/// Configuration a threshold was computed under.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMeta {
    pub rho: f64,
    pub delta: f64,
    pub w: usize,
    pub shape: ShapeFunction,
    #[serde(rename = "L")]
    pub blocks: usize,
    pub w_s: usize,
    pub alpha_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub value: f64,
    /// Failure at `.0`, success at `.1`.
    pub bracket: (f64, f64),
    pub kind: ThresholdKind,
    pub meta: ThresholdMeta,
    pub evaluations: usize,
}

/// Bisects a monotone predicate that is false at `lo` and true at `hi` down to
/// a bracket of width `<= tol`. Both ends are checked before bisecting.
pub fn bisect<F>(mut lo: f64, mut hi: f64, tol: f64, mut pred: F) -> Result<((f64, f64), usize), ThresholdError>
where
    F: FnMut(f64) -> Result<bool, ThresholdError>,
{
    if !(tol > 0.0) {
        return Err(ThresholdError::Tolerance(tol));
    }
    let hi_ok = pred(hi)?;
    let lo_ok = pred(lo)?;
    if lo_ok || !hi_ok {
        return Err(ThresholdError::Bracket { lo, hi, lo_ok, hi_ok });
    }
    let mut evals = 2;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        evals += 1;
        if pred(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(((lo, hi), evals))
}

/// Runs state evolution for a coupled spec from the uninformative start.
pub fn run_spec(spec: &CouplingSpec, rho: f64, delta: f64, stop: &StopRule<f64>) -> Result<SEOutcome<f64>, ThresholdError> {
    let ctx = SEContext::from_spec(spec, ProblemParams::new(rho, delta)?)?;
    Ok(se_run(&ctx, SeInit::Uninformative, stop)?)
}

fn succeeds(spec: &CouplingSpec, rho: f64, delta: f64, stop: &StopRule<f64>) -> Result<bool, ThresholdError> {
    let out = run_spec(spec, rho, delta, stop)?;
    log::trace!(
        "alpha_b={:.6} alpha_s={:.6} w_s={} -> {:?} after {}",
        spec.alpha_b,
        spec.alpha_s,
        spec.w_s,
        out.status,
        out.iterations
    );
    Ok(out.succeeded())
}

/// Uncoupled algorithmic threshold, bracketed in `[rho, 1]`.
pub fn find_alpha_bp(rho: f64, delta: f64, tol: f64) -> Result<ThresholdResult, ThresholdError> {
    let stop = StopRule::default();
    let pred = |a: f64| succeeds(&CouplingSpec::new(1, 0, 0, a, a), rho, delta, &stop);
    let ((lo, hi), evaluations) = match bisect(rho, 1.0, tol, pred) {
        // Very dense signals reach an O(sqrt(delta)) error already at alpha = rho;
        // widen the bracket below the counting bound instead of giving up.
        Err(ThresholdError::Bracket { lo_ok: true, hi_ok: true, .. }) => {
            bisect(BP_FALLBACK_LOWER * rho, 1.0, tol, pred)?
        }
        r => r?,
    };
    Ok(ThresholdResult {
        value: 0.5 * (lo + hi),
        bracket: (lo, hi),
        kind: ThresholdKind::Bp,
        meta: ThresholdMeta {
            rho,
            delta,
            w: 0,
            shape: ShapeFunction::flat(),
            blocks: 1,
            w_s: 0,
            alpha_s: 0.0,
        },
        evaluations,
    })
}

/// Coupled threshold at range `w`, searched in `[rho, upper]` where `upper` is
/// the success end of the `alpha_bp` bracket (computed when not supplied).
pub fn find_alpha_w_below(
    rho: f64,
    delta: f64,
    w: usize,
    shape: ShapeFunction,
    blocks: usize,
    tol: f64,
    upper: Option<f64>,
) -> Result<ThresholdResult, ThresholdError> {
    let upper = match upper {
        Some(u) => u,
        None => find_alpha_bp(rho, delta, tol)?.bracket.1,
    };
    let w_s = strong_seed_size(w);
    let stop = StopRule::default();
    let ((lo, hi), evaluations) = bisect(rho, upper, tol, |a| {
        let spec = CouplingSpec::new(blocks, w, w_s, a, STRONG_SEED_RATIO).with_shape(shape);
        succeeds(&spec, rho, delta, &stop)
    })?;
    Ok(ThresholdResult {
        value: 0.5 * (lo + hi),
        bracket: (lo, hi),
        kind: ThresholdKind::CoupledW,
        meta: ThresholdMeta { rho, delta, w, shape, blocks, w_s, alpha_s: STRONG_SEED_RATIO },
        evaluations,
    })
}

pub fn find_alpha_w(
    rho: f64,
    delta: f64,
    w: usize,
    shape: ShapeFunction,
    blocks: usize,
    tol: f64,
) -> Result<ThresholdResult, ThresholdError> {
    find_alpha_w_below(rho, delta, w, shape, blocks, tol, None)
}

/// Large-range estimate of the optimal threshold; an upper bound on it.
pub fn alpha_c_estimate(rho: f64, delta: f64, tol: f64, upper: Option<f64>) -> Result<ThresholdResult, ThresholdError> {
    let mut r = find_alpha_w_below(rho, delta, CPROXY_RANGE, ShapeFunction::flat(), CPROXY_BLOCKS, tol, upper)?;
    r.kind = ThresholdKind::CProxy;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedPoint {
    pub w_s: usize,
    pub alpha_s_star: f64,
    pub alpha_eff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedConfig {
    pub rho: f64,
    pub delta: f64,
    pub alpha_b: f64,
    pub w: usize,
    #[serde(rename = "L")]
    pub blocks: usize,
    pub shape: ShapeFunction,
    pub alpha_s_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedBoundary {
    pub points: Vec<SeedPoint>,
    /// Seed sizes at which even `alpha_s_max` does not propagate.
    pub non_propagating: Vec<usize>,
    pub config: SeedConfig,
}

fn seed_point(cfg: &SeedConfig, w_s: usize, tol: f64) -> Result<Option<SeedPoint>, ThresholdError> {
    let stop = StopRule::default();
    let spec_at = |a_s: f64| {
        CouplingSpec::new(cfg.blocks, cfg.w, w_s, cfg.alpha_b, a_s).with_shape(cfg.shape)
    };
    let pred = |a_s: f64| succeeds(&spec_at(a_s), cfg.rho, cfg.delta, &stop);
    if !pred(cfg.alpha_s_max)? {
        return Ok(None);
    }
    let alpha_s_star = if pred(cfg.alpha_b)? {
        // the bulk propagates unaided
        cfg.alpha_b
    } else {
        let ((_, hi), _) = bisect(cfg.alpha_b, cfg.alpha_s_max, tol, pred)?;
        hi
    };
    Ok(Some(SeedPoint {
        w_s,
        alpha_s_star,
        alpha_eff: effective_alpha(&spec_at(alpha_s_star)),
    }))
}

/// Propagation boundary in the `(w_s, alpha_s)` plane. Seed sizes are
/// processed in parallel and merged in input order.
#[allow(clippy::too_many_arguments)]
pub fn seed_boundary(
    rho: f64,
    delta: f64,
    alpha_b: f64,
    w: usize,
    blocks: usize,
    shape: ShapeFunction,
    ws_list: &[usize],
    tol: f64,
) -> Result<SeedBoundary, ThresholdError> {
    let config = SeedConfig { rho, delta, alpha_b, w, blocks, shape, alpha_s_max: SEED_RATIO_MAX };
    let results: Vec<_> = ws_list
        .par_iter()
        .map(|&w_s| seed_point(&config, w_s, tol).map(|p| (w_s, p)))
        .collect::<Result<_, _>>()?;
    let mut points = Vec::new();
    let mut non_propagating = Vec::new();
    for (w_s, p) in results {
        match p {
            Some(p) => points.push(p),
            None => non_propagating.push(w_s),
        }
    }
    Ok(SeedBoundary { points, non_propagating, config })
}

/// Boundary point with the smallest effective ratio; ties go to the smaller seed.
pub fn minimize_effective_alpha(boundary: &SeedBoundary) -> Result<SeedPoint, ThresholdError> {
    let mut pts = boundary.points.clone();
    pts.sort_by_key(|p| p.w_s);
    let mut best: Option<SeedPoint> = None;
    for p in pts {
        if best.is_none_or(|b| p.alpha_eff < b.alpha_eff) {
            best = Some(p);
        }
    }
    best.ok_or(ThresholdError::EmptyBoundary)
}

/// One `(rho, w)` row of a phase diagram. Failed computations are `None` and
/// the reason is kept in `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub rho: f64,
    pub w: usize,
    pub alpha_bp: Option<f64>,
    pub alpha_w: Option<f64>,
    pub alpha_c_proxy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `(rho, w, alpha_bp, alpha_w, alpha_c_proxy)` rows for every grid point.
pub fn phase_diagram(
    rho_grid: &[f64],
    delta: f64,
    w_list: &[usize],
    shape: ShapeFunction,
    blocks: usize,
    tol: f64,
) -> Vec<PhaseRow> {
    let per_rho: Vec<(Result<ThresholdResult, ThresholdError>, Result<ThresholdResult, ThresholdError>)> = rho_grid
        .par_iter()
        .map(|&rho| {
            let bp = find_alpha_bp(rho, delta, tol);
            let cp = match &bp {
                Ok(b) => alpha_c_estimate(rho, delta, tol, Some(b.bracket.1)),
                Err(e) => Err(e.clone()),
            };
            (bp, cp)
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..rho_grid.len())
        .flat_map(|i| w_list.iter().map(move |&w| (i, w)))
        .collect();
    jobs.par_iter()
        .map(|&(i, w)| {
            let rho = rho_grid[i];
            let (bp, cp) = &per_rho[i];
            let mut errors = Vec::new();
            let aw = match bp {
                Ok(b) => find_alpha_w_below(rho, delta, w, shape, blocks, tol, Some(b.bracket.1)),
                Err(e) => Err(e.clone()),
            };
            for r in [bp, cp, &aw] {
                if let Err(e) = r {
                    errors.push(e.to_string());
                }
            }
            errors.dedup();
            PhaseRow {
                rho,
                w,
                alpha_bp: bp.as_ref().ok().map(|r| r.value),
                alpha_w: aw.as_ref().ok().map(|r| r.value),
                alpha_c_proxy: cp.as_ref().ok().map(|r| r.value),
                error: if errors.is_empty() { None } else { Some(errors.join("; ")) },
            }
        })
        .collect()
}

/// Measured speed for one `(alpha_b, tilt)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedPoint {
    pub alpha_b: f64,
    pub tilt: f64,
    pub speed: f64,
    pub degenerate: bool,
}

/// Front speed with the strong threshold-hunting seed.
pub fn measure_speed(
    rho: f64,
    delta: f64,
    alpha_b: f64,
    w: usize,
    blocks: usize,
    shape: ShapeFunction,
) -> Result<SpeedEstimate, ThresholdError> {
    let spec = CouplingSpec::new(blocks, w, strong_seed_size(w), alpha_b, STRONG_SEED_RATIO).with_shape(shape);
    let ctx = SEContext::from_spec(&spec, ProblemParams::new(rho, delta)?)?;
    let out = se_run(&ctx, SeInit::Uninformative, &StopRule::default())?;
    Ok(propagation_speed(&out, &ctx))
}

/// Speeds over an `alpha_b` grid for each tilt, in `(alpha_b, tilt)` order.
pub fn speed_curve(
    rho: f64,
    delta: f64,
    w: usize,
    blocks: usize,
    tilts: &[f64],
    alpha_grid: &[f64],
) -> Result<Vec<SpeedPoint>, ThresholdError> {
    let jobs: Vec<(f64, f64)> = alpha_grid
        .iter()
        .flat_map(|&a| tilts.iter().map(move |&t| (a, t)))
        .collect();
    jobs.par_iter()
        .map(|&(alpha_b, tilt)| {
            let s = measure_speed(rho, delta, alpha_b, w, blocks, ShapeFunction::with_tilt(tilt))?;
            Ok(SpeedPoint { alpha_b, tilt, speed: s.speed, degenerate: s.degenerate })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_brackets_a_step() {
        let ((lo, hi), evals) = bisect(0.0, 1.0, 1e-3, |x| Ok(x >= 0.3141)).unwrap();
        assert!(lo < 0.3141 && hi >= 0.3141 && hi - lo <= 1e-3);
        assert!(evals > 2);
    }

    #[test]
    fn bisect_reports_bad_brackets() {
        assert!(matches!(
            bisect(0.0, 1.0, 1e-3, |_| Ok(true)),
            Err(ThresholdError::Bracket { lo_ok: true, .. })
        ));
        assert!(matches!(
            bisect(0.0, 1.0, 1e-3, |_| Ok(false)),
            Err(ThresholdError::Bracket { hi_ok: false, .. })
        ));
        assert!(matches!(bisect(0.0, 1.0, 0.0, |_| Ok(true)), Err(ThresholdError::Tolerance(_))));
    }

    fn boundary(points: &[(usize, f64, f64)]) -> SeedBoundary {
        SeedBoundary {
            points: points
                .iter()
                .map(|&(w_s, alpha_s_star, alpha_eff)| SeedPoint { w_s, alpha_s_star, alpha_eff })
                .collect(),
            non_propagating: vec![],
            config: SeedConfig {
                rho: 0.4,
                delta: 1e-12,
                alpha_b: 0.5,
                w: 1,
                blocks: 400,
                shape: ShapeFunction::flat(),
                alpha_s_max: SEED_RATIO_MAX,
            },
        }
    }

    #[test]
    fn effective_alpha_argmin_prefers_smaller_seed_on_ties() {
        let b = boundary(&[(8, 0.6, 0.502), (2, 0.9, 0.504), (4, 0.7, 0.502)]);
        let best = minimize_effective_alpha(&b).unwrap();
        assert_eq!((best.w_s, best.alpha_s_star, best.alpha_eff), (4, 0.7, 0.502));
        let single = boundary(&[(3, 0.8, 0.51)]);
        assert_eq!(minimize_effective_alpha(&single).unwrap().w_s, 3);
        assert_eq!(minimize_effective_alpha(&boundary(&[])), Err(ThresholdError::EmptyBoundary));
    }

    #[test]
    fn dense_signal_needs_nearly_full_sampling() {
        let r = find_alpha_bp(0.99, 1e-12, DEFAULT_TOL).unwrap();
        assert!(r.value > 0.98, "{}", r.value);
        assert!(r.bracket.1 - r.bracket.0 <= DEFAULT_TOL);
    }
}
