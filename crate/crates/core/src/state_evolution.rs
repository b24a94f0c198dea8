//! Asymptotic state evolution of the per-block mean-squared error.
//!
//! One step maps a profile `E` to
//!
//! ```text
//! qhat_p = sum_q alpha_q J_qp / (Delta + sum_r J_qr E_r)
//! E'_p   = rho - rho^2 qhat_p / (qhat_p + 1) G(rho, qhat_p)
//! ```
//!
//! where `G` is a one-dimensional Gaussian integral evaluated by adaptive
//! Gauss-Legendre quadrature.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{
    build_alpha_profile, build_coupling_matrix, AlphaProfile, CouplingMatrix, CouplingSpec, ModelError,
    ProblemParams,
};
use crate::quadrature::{geometric_breaks, integrate_panels};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeError {
    #[error("qhat={0} must be non-negative")]
    NegativePrecision(f64),
    #[error("rho={0} must lie in (0, 1]")]
    Density(f64),
    #[error("profile entry {block} is not finite ({value})")]
    NonFinite { block: usize, value: f64 },
    #[error("profile has {got} blocks, ensemble has {expected}")]
    Length { got: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Upper end of the (halved) integration range; `e^{-z^2/2} < 1e-31` beyond it.
pub const Z_MAX: f64 = 12.0;
const ABS_TOL: f64 = 1e-13;
const REL_TOL: f64 = 1e-12;

fn check_args<T: Scalar>(rho: T, qhat: T) -> Result<(), SeError> {
    if !(rho > T::zero() && rho <= T::one()) {
        return Err(SeError::Density(rho.to_f64_lossy()));
    }
    if qhat.is_nan() || qhat < T::zero() {
        return Err(SeError::NegativePrecision(qhat.to_f64_lossy()));
    }
    Ok(())
}

/// Breakpoints on `[0, Z_MAX]` bracketing the point where the two terms of the
/// denominator cross, which for large `qhat` is a sharp step near `z = 0`.
fn breakpoints<T: Scalar>(rho: T, qhat: T) -> Vec<T> {
    let zmax = T::of(Z_MAX);
    let mut breaks = vec![T::zero(), T::one(), T::of(3.0), T::of(6.0), zmax];
    if rho < T::one() && qhat > T::zero() {
        let h = T::of(0.5) * qhat.ln_1p();
        let lift = h - (rho / (T::one() - rho)).ln();
        if lift > T::zero() {
            let zt = (T::of(2.0) * lift / qhat).sqrt();
            // the log-ratio of the two terms changes at rate z_t * qhat there
            let width = T::one() / (zt * qhat).max(T::epsilon());
            breaks.extend(geometric_breaks(T::zero(), zmax, zt, width, 7));
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    breaks.dedup();
    breaks
}

/// Log of the second denominator term, `ln(1 - rho) + ln(1 + qhat)/2 - z^2 qhat/2`.
#[inline]
fn log_spike<T: Scalar>(log_one_minus_rho: T, half_log: T, qhat: T, z2: T) -> T {
    log_one_minus_rho + half_log - T::of(0.5) * z2 * qhat
}

/// `G(rho, qhat) = int dz/sqrt(2 pi) z^2 e^{-z^2/2} / [rho + (1 - rho) sqrt(1 + qhat) e^{-z^2 qhat/2}]`.
///
/// Lies in `[1, 1/rho]`. An infinite `qhat` returns the limit `1/rho`.
pub fn g_integral<T: Scalar>(rho: T, qhat: T) -> Result<T, SeError> {
    check_args(rho, qhat)?;
    if rho == T::one() {
        return Ok(T::one());
    }
    if qhat.is_infinite() {
        return Ok(rho.recip());
    }
    let norm = T::one() / (T::of(2.0) * T::PI()).sqrt();
    let l1r = (T::one() - rho).ln();
    let hl = T::of(0.5) * qhat.ln_1p();
    let f = |z: T| {
        let z2 = z * z;
        let den = rho + log_spike(l1r, hl, qhat, z2).exp();
        z2 * (-T::of(0.5) * z2).exp() / den
    };
    let q = integrate_panels(&f, &breakpoints(rho, qhat), T::of(ABS_TOL));
    // the exact value is bracketed by [1, 1/rho]; clamp away rounding overshoot
    Ok((T::of(2.0) * norm * q.value).max(T::one()).min(rho.recip()))
}

/// `1/rho - G(rho, qhat)`, integrated directly so that it keeps full relative
/// precision when `G` is close to `1/rho`.
pub fn g_complement<T: Scalar>(rho: T, qhat: T) -> Result<T, SeError> {
    check_args(rho, qhat)?;
    if rho == T::one() || qhat.is_infinite() {
        return Ok(T::zero());
    }
    let norm = T::one() / (T::of(2.0) * T::PI()).sqrt();
    let l1r = (T::one() - rho).ln();
    let hl = T::of(0.5) * qhat.ln_1p();
    let f = |z: T| {
        let z2 = z * z;
        let spike = log_spike(l1r, hl, qhat, z2).exp();
        let den = rho + spike;
        z2 * (-T::of(0.5) * z2).exp() * spike / (rho * den)
    };
    let breaks = breakpoints(rho, qhat);
    // coarse pass fixes the tolerance relative to the integral's own size
    let rough = integrate_panels(&f, &breaks, T::of(1e-3)).value;
    let tol = (rough.abs() * T::of(REL_TOL)).max(T::min_positive_value());
    let q = integrate_panels(&f, &breaks, tol);
    Ok(T::of(2.0) * norm * q.value)
}

/// Scalar MMSE map `rho - rho^2 qhat/(qhat+1) G(rho, qhat)`, in `[0, rho]`.
///
/// Evaluated as `rho/(qhat+1) + rho^2 qhat/(qhat+1) (1/rho - G)`, which is the
/// same quantity without cancellation when the result is tiny.
pub fn mmse_update<T: Scalar>(rho: T, qhat: T) -> Result<T, SeError> {
    let k = g_complement(rho, qhat)?;
    if qhat.is_infinite() {
        return Ok(T::zero());
    }
    let s = qhat / (qhat + T::one());
    let e = rho / (qhat + T::one()) + rho * rho * s * k;
    Ok(e.max(T::zero()).min(rho))
}

/// Per-block mean-squared errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorProfile<T>(pub Vec<T>);

impl<T: Scalar> ErrorProfile<T> {
    pub fn uniform(blocks: usize, value: T) -> Self {
        Self(vec![value; blocks])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> T {
        if self.0.is_empty() {
            return T::zero();
        }
        self.0.iter().copied().sum::<T>() / T::of_usize(self.0.len())
    }

    pub fn max(&self) -> T {
        self.0.iter().copied().fold(T::zero(), T::max)
    }
}

/// Everything one state-evolution step needs.
#[derive(Debug, Clone)]
pub struct SEContext<T> {
    pub coupling: CouplingMatrix<T>,
    pub alphas: AlphaProfile<T>,
    pub params: ProblemParams<T>,
    /// Number of seed blocks, used to place the speed-measurement window.
    pub seed_blocks: usize,
    pub mmse_mode: MmseMode,
}

impl<T: Scalar> SEContext<T> {
    pub fn new(
        coupling: CouplingMatrix<T>,
        alphas: AlphaProfile<T>,
        params: ProblemParams<T>,
        seed_blocks: usize,
    ) -> Result<Self, SeError> {
        if alphas.len() != coupling.blocks() {
            return Err(SeError::Length { got: alphas.len(), expected: coupling.blocks() });
        }
        params.validate()?;
        Ok(Self { coupling, alphas, params, seed_blocks, mmse_mode: MmseMode::default() })
    }

    pub fn from_spec(spec: &CouplingSpec, params: ProblemParams<T>) -> Result<Self, SeError> {
        Self::new(
            build_coupling_matrix(spec)?,
            build_alpha_profile(spec)?,
            params,
            spec.w_s,
        )
    }

    pub fn with_mmse_mode(mut self, mode: MmseMode) -> Self {
        self.mmse_mode = mode;
        self
    }

    pub fn blocks(&self) -> usize {
        self.coupling.blocks()
    }

    /// The all-`rho` profile: the only start available to a practical algorithm.
    pub fn uninformative(&self) -> ErrorProfile<T> {
        ErrorProfile::uniform(self.blocks(), self.params.rho)
    }
}

/// Effective precision `qhat_p` for every signal block.
pub fn precision_profile<T: Scalar>(profile: &ErrorProfile<T>, ctx: &SEContext<T>) -> Result<Vec<T>, SeError> {
    let l = ctx.blocks();
    if profile.len() != l {
        return Err(SeError::Length { got: profile.len(), expected: l });
    }
    if let Some((block, v)) = profile.0.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(SeError::NonFinite { block, value: v.to_f64_lossy() });
    }
    let j = &ctx.coupling;
    let alphas = ctx.alphas.as_slice();
    let delta = ctx.params.delta;
    // alpha_q / (Delta + sum_r J_qr E_r); a zero denominator means exact knowledge
    let weight: Vec<T> = (0..l)
        .map(|q| {
            let den = delta + j.row(q).map(|(r, v)| v * profile.0[r]).sum::<T>();
            if den > T::zero() {
                alphas[q] / den
            } else {
                T::infinity()
            }
        })
        .collect();
    Ok((0..l)
        .map(|p| {
            j.column(p)
                .filter(|(_, v)| *v > T::zero())
                .map(|(q, v)| weight[q] * v)
                .sum()
        })
        .collect())
}

/// One state-evolution step; returns the new profile and the precisions used.
pub fn se_step<T: Scalar>(profile: &ErrorProfile<T>, ctx: &SEContext<T>) -> Result<(ErrorProfile<T>, Vec<T>), SeError> {
    let qhat = precision_profile(profile, ctx)?;
    let rho = ctx.params.rho;
    let next = qhat
        .iter()
        .map(|&q| mmse_update(rho, q))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((ErrorProfile(next), qhat))
}

/// Largest `p` such that blocks `0..p` all have error below `eps_front`.
pub fn wavefront_position<T: Scalar>(profile: &ErrorProfile<T>, eps_front: T) -> usize {
    profile.0.iter().take_while(|&&e| e < eps_front).count()
}

/// Fixed point of the single-system recursion `E = mmse(rho, alpha/(Delta + E))`
/// reached from the informative start `E = 0`.
pub fn good_fixed_point<T: Scalar>(rho: T, alpha: T, delta: T) -> Result<T, SeError> {
    let mut e = T::zero();
    for _ in 0..100_000 {
        let den = delta + e;
        let q = if den > T::zero() { alpha / den } else { T::infinity() };
        let next = mmse_update(rho, q)?;
        if (next - e).abs() <= T::epsilon() * next.abs() * T::of(4.0) {
            return Ok(next);
        }
        e = next;
    }
    Ok(e)
}

/// Default success level: ten times the bulk good fixed point, floored at `1e-8`
/// and capped at `rho / 100` so a missing low-error branch cannot count as success.
pub fn default_success_threshold<T: Scalar>(rho: T, alpha_b: T, delta: T) -> Result<T, SeError> {
    let good = good_fixed_point(rho, alpha_b, delta)?;
    Ok((T::of(10.0) * good).max(T::of(1e-8)).min(rho * T::of(0.01)))
}

/// Stopping criteria for [`se_run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule<T> {
    pub tol_fixed_point: T,
    pub max_iter: usize,
    /// `None` selects [`default_success_threshold`] at the bulk ratio.
    pub success_threshold: Option<T>,
    pub stall_window: usize,
    pub eps_front: T,
}

impl<T: Scalar> Default for StopRule<T> {
    fn default() -> Self {
        Self {
            tol_fixed_point: T::of(1e-14),
            max_iter: 100_000,
            success_threshold: None,
            stall_window: 500,
            eps_front: T::of(1e-6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SeStatus {
    Success,
    Stalled,
    MaxIterations,
}

/// Summary of a state-evolution run.
#[derive(Debug, Clone)]
pub struct SEOutcome<T> {
    pub status: SeStatus,
    pub final_profile: ErrorProfile<T>,
    pub iterations: usize,
    /// `(iteration, front position)` after every step.
    pub front_trace: Vec<(usize, usize)>,
    pub mean_mse_trace: Vec<T>,
    pub max_mse_trace: Vec<T>,
    /// Full profiles after every step, kept only on request.
    pub profiles: Vec<ErrorProfile<T>>,
    pub success_threshold: T,
}

impl<T> SEOutcome<T> {
    pub fn succeeded(&self) -> bool {
        self.status == SeStatus::Success
    }
}

/// Starting profile for [`se_run`].
#[derive(Debug, Clone)]
pub enum SeInit<T> {
    Uninformative,
    Profile(ErrorProfile<T>),
}

/// How [`se_run`] evaluates the scalar MMSE map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum MmseMode {
    /// Adaptive quadrature on every call.
    Quadrature,
    /// Piecewise Chebyshev interpolation of `ln E` against `ln qhat`, with the
    /// pieces built lazily by quadrature. Agrees with [`mmse_update`] to about
    /// `1e-13` relative and is two orders of magnitude cheaper.
    #[default]
    Table,
}

const TABLE_LOG_MIN: f64 = -12.0;
const TABLE_LOG_MAX: f64 = 700.0;
const TABLE_PIECE: f64 = 0.5;
const TABLE_DEGREE: usize = 14;

/// Lazily filled interpolation table of `ln mmse(rho, e^s)`.
#[derive(Debug, Clone)]
pub struct MmseTable<T> {
    rho: T,
    pieces: Vec<Option<[T; TABLE_DEGREE]>>,
}

impl<T: Scalar> MmseTable<T> {
    pub fn new(rho: T) -> Result<Self, SeError> {
        check_args(rho, T::zero())?;
        let n = ((TABLE_LOG_MAX - TABLE_LOG_MIN) / TABLE_PIECE).ceil() as usize;
        Ok(Self { rho, pieces: vec![None; n] })
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    fn build_piece(&self, i: usize) -> Result<[T; TABLE_DEGREE], SeError> {
        let n = TABLE_DEGREE;
        let lo = TABLE_LOG_MIN + i as f64 * TABLE_PIECE;
        let mid = lo + 0.5 * TABLE_PIECE;
        let half = 0.5 * TABLE_PIECE;
        let mut values = [0.0f64; TABLE_DEGREE];
        for (k, v) in values.iter_mut().enumerate() {
            let x = (std::f64::consts::PI * (k as f64 + 0.5) / n as f64).cos();
            let q = T::of((mid + half * x).exp());
            *v = mmse_update(self.rho, q)?.to_f64_lossy().ln();
        }
        let mut coef = [T::zero(); TABLE_DEGREE];
        for (j, c) in coef.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, v) in values.iter().enumerate() {
                acc += v * (std::f64::consts::PI * j as f64 * (k as f64 + 0.5) / n as f64).cos();
            }
            let scale = if j == 0 { 1.0 } else { 2.0 };
            *c = T::of(scale * acc / n as f64);
        }
        Ok(coef)
    }

    /// `mmse_update(rho, qhat)` through the table, falling back to quadrature
    /// outside its range.
    pub fn eval(&mut self, qhat: T) -> Result<T, SeError> {
        check_args(self.rho, qhat)?;
        if qhat.is_infinite() {
            return Ok(T::zero());
        }
        let s = qhat.ln().to_f64_lossy();
        if !(s > TABLE_LOG_MIN && s < TABLE_LOG_MAX) {
            return mmse_update(self.rho, qhat);
        }
        let i = (((s - TABLE_LOG_MIN) / TABLE_PIECE) as usize).min(self.pieces.len() - 1);
        let coef = match self.pieces[i] {
            Some(c) => c,
            None => {
                let c = self.build_piece(i)?;
                self.pieces[i] = Some(c);
                c
            }
        };
        let lo = TABLE_LOG_MIN + i as f64 * TABLE_PIECE;
        let x = T::of((s - lo) / TABLE_PIECE * 2.0 - 1.0);
        // Clenshaw recurrence
        let two_x = x + x;
        let (mut b1, mut b2) = (T::zero(), T::zero());
        for &c in coef.iter().skip(1).rev() {
            let b0 = two_x * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        let log_e = x * b1 - b2 + coef[0];
        Ok(log_e.exp().max(T::zero()).min(self.rho))
    }
}

/// Scalar MMSE evaluator used inside a run: exact-bits memo in front of either
/// the quadrature or the interpolation table.
struct MmseMemo<T> {
    rho: T,
    table: Option<MmseTable<T>>,
    memo: HashMap<u64, T>,
    hits: u64,
    misses: u64,
}

const MEMO_CAPACITY: usize = 1 << 16;

impl<T: Scalar> MmseMemo<T> {
    fn new(rho: T, mode: MmseMode) -> Result<Self, SeError> {
        let table = match mode {
            MmseMode::Quadrature => None,
            MmseMode::Table => Some(MmseTable::new(rho)?),
        };
        Ok(Self { rho, table, memo: HashMap::new(), hits: 0, misses: 0 })
    }

    fn get(&mut self, qhat: T) -> Result<T, SeError> {
        let key = qhat.to_f64_lossy().to_bits();
        if let Some(&e) = self.memo.get(&key) {
            self.hits += 1;
            return Ok(e);
        }
        self.misses += 1;
        let e = match self.table.as_mut() {
            Some(t) => t.eval(qhat)?,
            None => mmse_update(self.rho, qhat)?,
        };
        if self.memo.len() >= MEMO_CAPACITY {
            self.memo.clear();
        }
        self.memo.insert(key, e);
        Ok(e)
    }

    fn step(&mut self, profile: &ErrorProfile<T>, ctx: &SEContext<T>) -> Result<ErrorProfile<T>, SeError> {
        let qhat = precision_profile(profile, ctx)?;
        let next = qhat.iter().map(|&q| self.get(q)).collect::<Result<Vec<_>, _>>()?;
        Ok(ErrorProfile(next))
    }
}

/// Iterates [`se_step`] until success, stall, or the iteration cap.
pub fn se_run<T: Scalar>(ctx: &SEContext<T>, init: SeInit<T>, stop: &StopRule<T>) -> Result<SEOutcome<T>, SeError> {
    se_run_recorded(ctx, init, stop, false)
}

/// [`se_run`] that optionally keeps every intermediate profile.
pub fn se_run_recorded<T: Scalar>(
    ctx: &SEContext<T>,
    init: SeInit<T>,
    stop: &StopRule<T>,
    keep_profiles: bool,
) -> Result<SEOutcome<T>, SeError> {
    let rho = ctx.params.rho;
    let mut profile = match init {
        SeInit::Uninformative => ctx.uninformative(),
        SeInit::Profile(p) => {
            if p.len() != ctx.blocks() {
                return Err(SeError::Length { got: p.len(), expected: ctx.blocks() });
            }
            p
        }
    };
    let threshold = match stop.success_threshold {
        Some(t) => t,
        None => {
            let bulk = ctx.alphas.as_slice()[ctx.seed_blocks.min(ctx.blocks() - 1)];
            default_success_threshold(rho, bulk, ctx.params.delta)?
        }
    };
    let mut out = SEOutcome {
        status: SeStatus::MaxIterations,
        final_profile: profile.clone(),
        iterations: 0,
        front_trace: Vec::new(),
        mean_mse_trace: Vec::new(),
        max_mse_trace: Vec::new(),
        profiles: Vec::new(),
        success_threshold: threshold,
    };
    let mut memo = MmseMemo::new(rho, ctx.mmse_mode)?;
    let mut last_front = wavefront_position(&profile, stop.eps_front);
    let mut quiet = 0usize;
    for t in 1..=stop.max_iter {
        let next = memo.step(&profile, ctx)?;
        let change = next
            .0
            .iter()
            .zip(&profile.0)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max);
        let front = wavefront_position(&next, stop.eps_front);
        let max = next.max();
        out.front_trace.push((t, front));
        out.mean_mse_trace.push(next.mean());
        out.max_mse_trace.push(max);
        if keep_profiles {
            out.profiles.push(next.clone());
        }
        out.iterations = t;
        profile = next;
        if max <= threshold {
            out.status = SeStatus::Success;
            break;
        }
        if front == last_front && change < stop.tol_fixed_point {
            quiet += 1;
        } else {
            quiet = 0;
        }
        last_front = front;
        if quiet >= stop.stall_window {
            out.status = SeStatus::Stalled;
            break;
        }
    }
    log::debug!("se_run: {} iterations, memo hits {} misses {}", out.iterations, memo.hits, memo.misses);
    out.final_profile = profile;
    Ok(out)
}

/// Exactly `iterations` profiles from `init`, with no stopping rule.
pub fn se_trajectory<T: Scalar>(
    ctx: &SEContext<T>,
    init: SeInit<T>,
    iterations: usize,
) -> Result<Vec<ErrorProfile<T>>, SeError> {
    let mut profile = match init {
        SeInit::Uninformative => ctx.uninformative(),
        SeInit::Profile(p) => {
            if p.len() != ctx.blocks() {
                return Err(SeError::Length { got: p.len(), expected: ctx.blocks() });
            }
            p
        }
    };
    let mut memo = MmseMemo::new(ctx.params.rho, ctx.mmse_mode)?;
    let mut out = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        profile = memo.step(&profile, ctx)?;
        out.push(profile.clone());
    }
    Ok(out)
}

/// Steady-state front speed measured from a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedEstimate {
    /// Reconstructed blocks per iteration.
    pub speed: f64,
    /// Set when the measurement window was missing or too short and the speed
    /// was reported as zero.
    pub degenerate: bool,
    pub window: Option<(usize, usize)>,
}

/// Minimum number of iterations in the fitting window.
pub const MIN_SPEED_WINDOW: usize = 20;

/// Least-squares slope of front position against iteration over the window
/// from the first iteration with front `>= w_s + 5w` to the first with
/// front `>= L - 5w`.
pub fn propagation_speed<T: Scalar>(outcome: &SEOutcome<T>, ctx: &SEContext<T>) -> SpeedEstimate {
    let zero = SpeedEstimate { speed: 0.0, degenerate: true, window: None };
    let l = ctx.blocks();
    let w = ctx.coupling.range();
    let lo_front = ctx.seed_blocks + 5 * w;
    let hi_front = l.saturating_sub(5 * w);
    if outcome.status == SeStatus::Stalled || lo_front >= hi_front {
        return SpeedEstimate { degenerate: outcome.status != SeStatus::Stalled, ..zero };
    }
    let trace = &outcome.front_trace;
    let Some(start) = trace.iter().position(|&(_, f)| f >= lo_front) else {
        return zero;
    };
    let Some(end) = trace.iter().position(|&(_, f)| f >= hi_front) else {
        return zero;
    };
    if end < start + MIN_SPEED_WINDOW {
        log::debug!("speed window of {} iterations is too short", end.saturating_sub(start));
        return SpeedEstimate { window: Some((trace[start].0, trace[end].0)), ..zero };
    }
    let pts = &trace[start..=end];
    let n = pts.len() as f64;
    let mx = pts.iter().map(|&(t, _)| t as f64).sum::<f64>() / n;
    let my = pts.iter().map(|&(_, f)| f as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, f) in pts {
        let dx = t as f64 - mx;
        sxy += dx * (f as f64 - my);
        sxx += dx * dx;
    }
    SpeedEstimate {
        speed: sxy / sxx,
        degenerate: false,
        window: Some((trace[start].0, trace[end].0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CouplingSpec, ProblemParams};

    fn g_integral(rho: f64, qhat: f64) -> Result<f64, SeError> {
        super::g_integral(rho, qhat)
    }

    fn g_complement(rho: f64, qhat: f64) -> Result<f64, SeError> {
        super::g_complement(rho, qhat)
    }

    fn mmse_update(rho: f64, qhat: f64) -> Result<f64, SeError> {
        super::mmse_update(rho, qhat)
    }

    #[test]
    fn g_at_zero_precision_is_one() {
        for rho in [0.05, 0.4, 0.9] {
            let g = g_integral(rho, 0.0).unwrap();
            assert!((g - 1.0).abs() < 1e-10, "rho={rho} g={g}");
        }
    }

    #[test]
    fn g_large_precision_limit() {
        let g = g_integral(0.4, 1e12).unwrap();
        assert!(g > 2.4999 && g <= 2.5, "{g}");
        assert_eq!(g_integral(0.4, f64::INFINITY).unwrap(), 2.5);
        // log-space keeps the extreme end finite
        assert!(g_integral(0.3, 1e300).unwrap().is_finite());
    }

    #[test]
    fn g_rejects_bad_arguments() {
        assert!(matches!(g_integral(0.4, -1.0), Err(SeError::NegativePrecision(_))));
        assert!(matches!(g_integral(0.0, 1.0), Err(SeError::Density(_))));
        assert!(matches!(g_integral(1.2, 1.0), Err(SeError::Density(_))));
    }

    #[test]
    fn complement_matches_direct_integral() {
        for rho in [0.1, 0.4, 0.8] {
            for q in [0.0, 0.3, 1.0, 17.0, 1e3, 1e6] {
                let g = g_integral(rho, q).unwrap();
                let k = g_complement(rho, q).unwrap();
                assert!((g + k - 1.0 / rho).abs() < 1e-11, "rho={rho} q={q}");
            }
        }
    }

    #[test]
    fn mmse_endpoints() {
        assert!((mmse_update(0.4, 0.0).unwrap() - 0.4).abs() < 1e-15);
        assert!(mmse_update(0.4, 1e12).unwrap() <= 1e-6);
        assert_eq!(mmse_update(0.4, f64::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn single_system_step() {
        let spec = CouplingSpec::new(1, 0, 0, 0.5, 0.5);
        let ctx = SEContext::from_spec(&spec, ProblemParams::<f64>::new(0.2, 1e-12).unwrap()).unwrap();
        let (next, qhat) = se_step(&ErrorProfile(vec![0.2]), &ctx).unwrap();
        let expect_q = 0.5 / (1e-12 + 0.2);
        assert!((qhat[0] - expect_q).abs() < 1e-12);
        assert_eq!(next.0[0], mmse_update(0.2, expect_q).unwrap());
    }

    #[test]
    fn interior_blocks_see_identical_precision() {
        let spec = CouplingSpec::new(30, 1, 0, 0.5, 0.5);
        let ctx = SEContext::from_spec(&spec, ProblemParams::<f64>::new(0.3, 1e-10).unwrap()).unwrap();
        let qhat = precision_profile(&ErrorProfile::uniform(30, 0.1), &ctx).unwrap();
        for p in 2..28 {
            assert!((qhat[p] - qhat[2]).abs() < 1e-12 * qhat[2]);
        }
        // truncated edges receive less
        assert!(qhat[0] < qhat[2]);
    }

    #[test]
    fn zero_noise_zero_error_is_exact_knowledge() {
        let spec = CouplingSpec::new(3, 1, 0, 0.5, 0.5);
        let ctx = SEContext::from_spec(&spec, ProblemParams::<f64>::new(0.3, 0.0).unwrap()).unwrap();
        let (next, qhat) = se_step(&ErrorProfile(vec![0.0, 0.0, 0.0]), &ctx).unwrap();
        assert!(qhat.iter().all(|q| q.is_infinite()));
        assert!(next.0.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn step_rejects_non_finite_and_wrong_length() {
        let spec = CouplingSpec::new(3, 1, 0, 0.5, 0.5);
        let ctx = SEContext::from_spec(&spec, ProblemParams::new(0.3, 1e-6).unwrap()).unwrap();
        assert!(matches!(
            se_step(&ErrorProfile(vec![0.1, f64::NAN, 0.1]), &ctx),
            Err(SeError::NonFinite { block: 1, .. })
        ));
        assert!(matches!(se_step(&ErrorProfile(vec![0.1]), &ctx), Err(SeError::Length { .. })));
    }

    #[test]
    fn wavefront_examples() {
        assert_eq!(wavefront_position(&ErrorProfile(vec![0.4; 5]), 1e-6), 0);
        assert_eq!(wavefront_position(&ErrorProfile(vec![0.0; 5]), 1e-6), 5);
        assert_eq!(wavefront_position(&ErrorProfile(vec![1e-9, 1e-9, 0.4, 1e-9]), 1e-6), 2);
    }

    #[test]
    fn easy_single_system_succeeds_quickly() {
        let spec = CouplingSpec::new(1, 0, 0, 0.9, 0.9);
        let ctx = SEContext::from_spec(&spec, ProblemParams::new(0.1, 1e-12).unwrap()).unwrap();
        let out = se_run(&ctx, SeInit::Uninformative, &StopRule::default()).unwrap();
        assert_eq!(out.status, SeStatus::Success);
        assert!(out.iterations < 60, "{}", out.iterations);
    }

    #[test]
    fn stalled_run_has_zero_speed() {
        let spec = CouplingSpec::new(1, 0, 0, 0.3, 0.3);
        let ctx = SEContext::from_spec(&spec, ProblemParams::new(0.4, 1e-12).unwrap()).unwrap();
        let out = se_run(&ctx, SeInit::Uninformative, &StopRule::default()).unwrap();
        assert_eq!(out.status, SeStatus::Stalled);
        assert_eq!(propagation_speed(&out, &ctx).speed, 0.0);
    }

    #[test]
    fn f32_instantiation_tracks_f64() {
        let g32 = super::g_integral(0.3f32, 2.0f32).unwrap() as f64;
        let g64 = g_integral(0.3f64, 2.0f64).unwrap();
        assert!((g32 - g64).abs() < 1e-5);
        let e32 = super::mmse_update(0.3f32, 2.0f32).unwrap() as f64;
        assert!((e32 - mmse_update(0.3, 2.0).unwrap()).abs() < 1e-5);
    }
}
