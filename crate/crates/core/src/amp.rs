//! Finite-size validation: concrete seeded coupled instances and an
//! approximate message passing (AMP) reconstruction whose per-block error is
//! compared with state evolution.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{build_alpha_profile, build_coupling_matrix, AlphaProfile, CouplingSpec, ModelError, ProblemParams};
use crate::state_evolution::{se_trajectory, SEContext, SeError, SeInit};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum AmpError {
    #[error("L={blocks} does not divide N={n}")]
    Indivisible { n: usize, blocks: usize },
    #[error("row block {block} would hold {rows:.3} measurements")]
    DegenerateRowBlock { block: usize, rows: f64 },
    #[error("noise variance must be positive, got Sigma2={0}")]
    Variance(f64),
    #[error("AMP state became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("instance file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    StateEvolution(#[from] SeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Measurement matrix stored as one dense slab per row block, covering only
/// the contiguous band of column blocks it couples to.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix<T> {
    rows: usize,
    cols: usize,
    row_blocks: Vec<Range<usize>>,
    col_blocks: Vec<Range<usize>>,
    /// Column range covered by each row block's slab.
    spans: Vec<Range<usize>>,
    slabs: Vec<Vec<T>>,
}

impl<T: Scalar> BlockMatrix<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_blocks(&self) -> &[Range<usize>] {
        &self.row_blocks
    }

    pub fn col_blocks(&self) -> &[Range<usize>] {
        &self.col_blocks
    }

    pub fn get(&self, mu: usize, i: usize) -> T {
        let q = self.row_blocks.iter().position(|r| r.contains(&mu)).expect("row in range");
        let span = &self.spans[q];
        if !span.contains(&i) {
            return T::zero();
        }
        let width = span.len();
        self.slabs[q][(mu - self.row_blocks[q].start) * width + (i - span.start)]
    }

    /// Entries of block `(q, r)` in row-major order.
    pub fn block_entries(&self, q: usize, r: usize) -> Vec<T> {
        let span = &self.spans[q];
        let cols = &self.col_blocks[r];
        if cols.start < span.start || cols.end > span.end {
            return vec![T::zero(); self.row_blocks[q].len() * cols.len()];
        }
        let width = span.len();
        let mut out = Vec::with_capacity(self.row_blocks[q].len() * cols.len());
        for row in self.slabs[q].chunks(width) {
            out.extend_from_slice(&row[cols.start - span.start..cols.end - span.start]);
        }
        out
    }

    /// `F x`.
    pub fn mul(&self, x: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.rows);
        for (q, span) in self.spans.iter().enumerate() {
            let xs = &x[span.clone()];
            for row in self.slabs[q].chunks(span.len()) {
                out.push(row.iter().zip(xs).map(|(&f, &v)| f * v).sum());
            }
        }
        out
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * self.cols];
        for (q, span) in self.spans.iter().enumerate() {
            for (k, row) in self.slabs[q].chunks(span.len()).enumerate() {
                let mu = self.row_blocks[q].start + k;
                out[mu * self.cols + span.start..mu * self.cols + span.end].copy_from_slice(row);
            }
        }
        out
    }

    fn from_dense(dense: &[T], row_blocks: Vec<Range<usize>>, col_blocks: Vec<Range<usize>>, spans: Vec<Range<usize>>) -> Self {
        let rows = row_blocks.last().map_or(0, |r| r.end);
        let cols = col_blocks.last().map_or(0, |r| r.end);
        let slabs = row_blocks
            .iter()
            .zip(&spans)
            .map(|(rb, span)| {
                let mut slab = Vec::with_capacity(rb.len() * span.len());
                for mu in rb.clone() {
                    slab.extend_from_slice(&dense[mu * cols + span.start..mu * cols + span.end]);
                }
                slab
            })
            .collect();
        Self { rows, cols, row_blocks, col_blocks, spans, slabs }
    }
}

/// One finite-size realization of the measurement model.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance<T> {
    pub spec: CouplingSpec,
    pub params: ProblemParams<T>,
    pub n: usize,
    pub block_rows: Vec<usize>,
    pub f: BlockMatrix<T>,
    pub x_true: Vec<T>,
    pub y: Vec<T>,
    pub rng_seed: u64,
}

impl<T: Scalar> Instance<T> {
    pub fn m(&self) -> usize {
        self.f.rows()
    }

    pub fn block_size(&self) -> usize {
        self.n / self.spec.blocks
    }

    /// Per-row-block undersampling ratios actually realized after rounding.
    pub fn realized_alphas(&self) -> Vec<f64> {
        let b = self.block_size() as f64;
        self.block_rows.iter().map(|&r| r as f64 / b).collect()
    }
}

/// Row-block sizes `round(alpha_q N / L)`, with the rounding surplus or deficit
/// of the total moved onto the last block (always a bulk block).
pub fn row_block_sizes(spec: &CouplingSpec, n: usize) -> Result<Vec<usize>, AmpError> {
    let per = n as f64 / spec.blocks as f64;
    let alphas = build_alpha_profile::<f64>(spec)?;
    let exact: Vec<f64> = alphas.0.iter().map(|a| a * per).collect();
    let total = exact.iter().sum::<f64>().round() as i64;
    let mut sizes: Vec<i64> = exact.iter().map(|x| x.round() as i64).collect();
    let assigned: i64 = sizes[..sizes.len() - 1].iter().sum();
    *sizes.last_mut().unwrap() = total - assigned;
    for (q, (&s, &x)) in sizes.iter().zip(&exact).enumerate() {
        if s < 1 || x < 1.0 {
            return Err(AmpError::DegenerateRowBlock { block: q, rows: x });
        }
    }
    Ok(sizes.into_iter().map(|s| s as usize).collect())
}

fn ranges(sizes: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&s| {
            let r = start..start + s;
            start += s;
            r
        })
        .collect()
}

/// Draws an instance: signal, then the matrix row block by row block, then
/// the noise, all from one ChaCha8 stream seeded with `rng_seed`.
pub fn generate_instance<T: Scalar>(
    spec: &CouplingSpec,
    params: ProblemParams<T>,
    n: usize,
    rng_seed: u64,
) -> Result<Instance<T>, AmpError> {
    spec.validate()?;
    params.validate()?;
    let l = spec.blocks;
    if n == 0 || n % l != 0 {
        return Err(AmpError::Indivisible { n, blocks: l });
    }
    let block = n / l;
    let block_rows = row_block_sizes(spec, n)?;
    let coupling = build_coupling_matrix::<f64>(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let rho = params.rho.to_f64_lossy();
    let x_true: Vec<T> = (0..n)
        .map(|_| {
            let on = rng.random::<f64>() < rho;
            let v: f64 = rng.sample(StandardNormal);
            if on {
                T::of(v)
            } else {
                T::zero()
            }
        })
        .collect();

    let row_blocks = ranges(&block_rows);
    let col_blocks = ranges(&vec![block; l]);
    let mut spans = Vec::with_capacity(l);
    let mut slabs = Vec::with_capacity(l);
    let inv_n = 1.0 / n as f64;
    for q in 0..l {
        let (lo, hi) = coupling.span(q);
        let span = col_blocks[lo].start..col_blocks[hi - 1].end;
        let stds: Vec<f64> = (lo..hi).map(|r| (coupling.get(q, r) * inv_n).sqrt()).collect();
        let mut slab = Vec::with_capacity(block_rows[q] * span.len());
        for _ in 0..block_rows[q] {
            for sd in &stds {
                for _ in 0..block {
                    let z: f64 = rng.sample(StandardNormal);
                    slab.push(T::of(sd * z));
                }
            }
        }
        spans.push(span);
        slabs.push(slab);
    }
    let m = row_blocks.last().map_or(0, |r| r.end);
    let f = BlockMatrix { rows: m, cols: n, row_blocks, col_blocks, spans, slabs };
    let noise_sd = params.delta.to_f64_lossy().sqrt();
    let y: Vec<T> = f
        .mul(&x_true)
        .into_iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + T::of(noise_sd * z)
        })
        .collect();
    Ok(Instance { spec: *spec, params, n, block_rows, f, x_true, y, rng_seed })
}

/// Posterior mean and variance of `x ~ rho N(0,1) + (1-rho) delta_0` observed
/// through `R = x + N(0, Sigma2)`.
pub fn denoise<T: Scalar>(r: T, sigma2: T, rho: T) -> Result<(T, T), AmpError> {
    if !(sigma2 > T::zero()) {
        return Err(AmpError::Variance(sigma2.to_f64_lossy()));
    }
    let one = T::one();
    let half = T::of(0.5);
    let m = r / (one + sigma2);
    let s2 = sigma2 / (one + sigma2);
    let pi = if rho >= one {
        one
    } else if rho <= T::zero() {
        T::zero()
    } else {
        // log of (1-rho) N(R;0,Sigma2) / (rho N(R;0,1+Sigma2))
        let log_slab = rho.ln() - half * (one + sigma2).ln() - half * r * r / (one + sigma2);
        let log_spike = (one - rho).ln() - half * sigma2.ln() - half * r * r / sigma2;
        one / (one + (log_spike - log_slab).exp())
    };
    let mean = pi * m;
    let var = pi * s2 + pi * (one - pi) * m * m;
    Ok((mean, var))
}

/// Iteration controls for [`amp_run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpOptions<T> {
    pub max_iter: usize,
    /// Stop once the RMS change of the estimate drops below this.
    pub tol: T,
    /// Weight of the previous estimate in `(a, v)`; zero disables damping.
    pub damping: T,
}

impl<T: Scalar> Default for AmpOptions<T> {
    fn default() -> Self {
        Self { max_iter: 200, tol: T::of(1e-13), damping: T::zero() }
    }
}

/// AMP estimate plus the per-block MSE after every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpTrajectory<T> {
    /// `per_block_mse[t][p]`: MSE of block `p` after iteration `t + 1`.
    pub per_block_mse: Vec<Vec<T>>,
    pub estimate: Vec<T>,
    pub variances: Vec<T>,
    pub converged: bool,
}

/// Message passing state.
#[derive(Debug, Clone)]
pub struct AmpState<T> {
    pub a: Vec<T>,
    pub v: Vec<T>,
    pub omega: Vec<T>,
    pub big_v: Vec<T>,
    pub iteration: usize,
}

fn block_mse<T: Scalar>(a: &[T], x: &[T], blocks: usize) -> Vec<T> {
    let size = a.len() / blocks;
    a.chunks(size)
        .zip(x.chunks(size))
        .map(|(ab, xb)| {
            ab.iter().zip(xb).map(|(&u, &v)| (u - v) * (u - v)).sum::<T>() / T::of_usize(size)
        })
        .collect()
}

/// Runs AMP from `a = 0`, `v = rho`, `omega = y`.
pub fn amp_run<T: Scalar>(
    instance: &Instance<T>,
    params: ProblemParams<T>,
    opts: &AmpOptions<T>,
) -> Result<AmpTrajectory<T>, AmpError> {
    let f = &instance.f;
    let (m, n) = (f.rows(), f.cols());
    let rho = params.rho;
    let delta = params.delta;
    let blocks = instance.spec.blocks;
    let mut st = AmpState {
        a: vec![T::zero(); n],
        v: vec![rho; n],
        omega: instance.y.clone(),
        big_v: vec![T::zero(); m],
        iteration: 0,
    };
    let mut prev_v = vec![T::zero(); m];
    let mut first = true;
    let mut traj = AmpTrajectory {
        per_block_mse: Vec::new(),
        estimate: Vec::new(),
        variances: Vec::new(),
        converged: false,
    };
    let mut col_prec = vec![T::zero(); n];
    let mut col_field = vec![T::zero(); n];
    let mut gain = vec![T::zero(); m];
    let mut resid = vec![T::zero(); m];
    for t in 1..=opts.max_iter {
        // V_mu and the Onsager-corrected omega_mu
        let mut mu = 0;
        for (q, span) in f.spans.iter().enumerate() {
            let (a, v) = (&st.a[span.clone()], &st.v[span.clone()]);
            for row in f.slabs[q].chunks(span.len()) {
                let (mut vv, mut fa) = (T::zero(), T::zero());
                for ((&fx, &ai), &vi) in row.iter().zip(a).zip(v) {
                    vv = vv + fx * fx * vi;
                    fa = fa + fx * ai;
                }
                let onsager = if first {
                    T::zero()
                } else {
                    (instance.y[mu] - st.omega[mu]) * vv / (delta + prev_v[mu])
                };
                st.big_v[mu] = vv;
                st.omega[mu] = fa - onsager;
                mu += 1;
            }
        }
        for mu in 0..m {
            let den = delta + st.big_v[mu];
            gain[mu] = T::one() / den;
            resid[mu] = (instance.y[mu] - st.omega[mu]) / den;
        }
        col_prec.iter_mut().for_each(|x| *x = T::zero());
        col_field.iter_mut().for_each(|x| *x = T::zero());
        let mut mu = 0;
        for (q, span) in f.spans.iter().enumerate() {
            let prec = &mut col_prec[span.clone()];
            let field = &mut col_field[span.clone()];
            for row in f.slabs[q].chunks(span.len()) {
                let (g, r) = (gain[mu], resid[mu]);
                for ((&fx, p), h) in row.iter().zip(prec.iter_mut()).zip(field.iter_mut()) {
                    *p = *p + fx * fx * g;
                    *h = *h + fx * r;
                }
                mu += 1;
            }
        }
        let mut change = T::zero();
        for i in 0..n {
            let sigma2 = T::one() / col_prec[i];
            let r = st.a[i] + sigma2 * col_field[i];
            let (mut a_new, mut v_new) = denoise(r, sigma2, rho).map_err(|_| AmpError::Divergence { iteration: t })?;
            if opts.damping > T::zero() {
                let d = opts.damping;
                a_new = d * st.a[i] + (T::one() - d) * a_new;
                v_new = d * st.v[i] + (T::one() - d) * v_new;
            }
            if !(a_new.is_finite() && v_new.is_finite()) {
                return Err(AmpError::Divergence { iteration: t });
            }
            change = change + (a_new - st.a[i]) * (a_new - st.a[i]);
            st.a[i] = a_new;
            st.v[i] = v_new.max(T::zero());
        }
        prev_v.copy_from_slice(&st.big_v);
        first = false;
        st.iteration = t;
        traj.per_block_mse.push(block_mse(&st.a, &instance.x_true, blocks));
        if (change / T::of_usize(n)).sqrt() < opts.tol {
            traj.converged = true;
            break;
        }
    }
    traj.estimate = st.a;
    traj.variances = st.v;
    Ok(traj)
}

/// Agreement between a state-evolution trajectory and an AMP trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    /// Mean over blocks of `|E_amp - E_se|`, per recorded iteration.
    pub mean_abs: Vec<f64>,
    pub max_mean_abs: f64,
    /// `front_amp - front_se` per recorded iteration.
    pub front: Vec<i64>,
    pub max_front: usize,
}

/// Compares two per-block trajectories on their common prefix of iterations.
pub fn se_amp_deviation<T: Scalar>(se_traj: &[Vec<T>], amp_traj: &[Vec<T>], eps_front: T) -> Deviation {
    let mut mean_abs = Vec::new();
    let mut front = Vec::new();
    for (se, amp) in se_traj.iter().zip(amp_traj) {
        let l = se.len().min(amp.len()).max(1);
        let d: f64 = se
            .iter()
            .zip(amp)
            .map(|(&a, &b)| (a - b).abs().to_f64_lossy())
            .sum::<f64>()
            / l as f64;
        mean_abs.push(d);
        let fs = se.iter().take_while(|&&e| e < eps_front).count() as i64;
        let fa = amp.iter().take_while(|&&e| e < eps_front).count() as i64;
        front.push(fa - fs);
    }
    Deviation {
        max_mean_abs: mean_abs.iter().copied().fold(0.0, f64::max),
        max_front: front.iter().map(|d| d.unsigned_abs() as usize).max().unwrap_or(0),
        mean_abs,
        front,
    }
}

/// Seed-averaged AMP trajectory next to the matched state evolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmpValidation {
    pub se: Vec<Vec<f64>>,
    pub amp: Vec<Vec<f64>>,
    pub deviation: Deviation,
    pub seeds: Vec<u64>,
    #[serde(rename = "N")]
    pub n: usize,
}

/// Runs AMP for exactly `iterations` steps on one instance per seed, averages
/// the per-block MSE over seeds and compares it with state evolution using
/// the realized row-block ratios.
pub fn validate_against_se(
    spec: &CouplingSpec,
    params: ProblemParams<f64>,
    n: usize,
    seeds: &[u64],
    iterations: usize,
    damping: f64,
    eps_front: f64,
) -> Result<AmpValidation, AmpError> {
    let l = spec.blocks;
    let mut sum = vec![vec![0.0; l]; iterations];
    let mut alphas = None;
    let opts = AmpOptions { max_iter: iterations, tol: 0.0, damping };
    for &seed in seeds {
        let inst = generate_instance(spec, params, n, seed)?;
        alphas.get_or_insert_with(|| inst.realized_alphas());
        let traj = amp_run(&inst, params, &opts)?;
        log::info!("amp seed {seed}: final mean mse {:.3e}", traj.per_block_mse.last().map_or(0.0, |p| p.iter().sum::<f64>() / l as f64));
        for (acc, row) in sum.iter_mut().zip(&traj.per_block_mse) {
            acc.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
    }
    let k = seeds.len().max(1) as f64;
    let amp: Vec<Vec<f64>> = sum.into_iter().map(|r| r.into_iter().map(|v| v / k).collect()).collect();
    let alphas = alphas.unwrap_or_else(|| build_alpha_profile::<f64>(spec).map(|a| a.0).unwrap_or_default());
    let ctx = SEContext::new(build_coupling_matrix(spec)?, AlphaProfile(alphas), params, spec.w_s)?;
    let se: Vec<Vec<f64>> = se_trajectory(&ctx, SeInit::Uninformative, iterations)?.into_iter().map(|p| p.0).collect();
    let deviation = se_amp_deviation(&se, &amp, eps_front);
    Ok(AmpValidation { se, amp, deviation, seeds: seeds.to_vec(), n })
}

/// Header of a persisted instance. The binary companion file holds `F`
/// (dense, row-major `M x N`), then `x_true`, then `y`, as little-endian `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceHeader {
    pub spec: CouplingSpec,
    pub params: ProblemParams<f64>,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub rng_seed: u64,
    pub block_rows: Vec<usize>,
    pub data_file: String,
}

fn format_err(path: &Path, reason: impl Into<String>) -> AmpError {
    AmpError::Format { path: path.to_path_buf(), reason: reason.into() }
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn write_instance<T: Scalar>(inst: &Instance<T>, stem: &Path) -> Result<(), AmpError> {
    let json_path = stem.with_extension("json");
    let bin_path = stem.with_extension("bin");
    let header = InstanceHeader {
        spec: inst.spec,
        params: ProblemParams { rho: inst.params.rho.to_f64_lossy(), delta: inst.params.delta.to_f64_lossy() },
        n: inst.n,
        m: inst.m(),
        rng_seed: inst.rng_seed,
        block_rows: inst.block_rows.clone(),
        data_file: bin_path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(&json_path)?), &header)?;
    let mut out = BufWriter::new(File::create(&bin_path)?);
    for v in inst.f.to_dense().iter().chain(&inst.x_true).chain(&inst.y) {
        out.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an instance written by [`write_instance`].
pub fn read_instance<T: Scalar>(json_path: &Path) -> Result<Instance<T>, AmpError> {
    let header: InstanceHeader = serde_json::from_reader(BufReader::new(File::open(json_path)?))?;
    let bin_path = json_path.with_file_name(&header.data_file);
    let (m, n) = (header.m, header.n);
    if header.block_rows.iter().sum::<usize>() != m || header.block_rows.len() != header.spec.blocks {
        return Err(format_err(json_path, "block_rows inconsistent with M and L"));
    }
    let mut bytes = Vec::new();
    BufReader::new(File::open(&bin_path)?).read_to_end(&mut bytes)?;
    let expect = (m * n + n + m) * 8;
    if bytes.len() != expect {
        return Err(format_err(&bin_path, format!("expected {expect} bytes, found {}", bytes.len())));
    }
    let vals: Vec<T> = bytes
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect();
    let (dense, rest) = vals.split_at(m * n);
    let (x_true, y) = rest.split_at(n);
    let coupling = build_coupling_matrix::<f64>(&header.spec)?;
    let l = header.spec.blocks;
    let row_blocks = ranges(&header.block_rows);
    let col_blocks = ranges(&vec![n / l; l]);
    let spans = (0..l)
        .map(|q| {
            let (lo, hi) = coupling.span(q);
            col_blocks[lo].start..col_blocks[hi - 1].end
        })
        .collect();
    Ok(Instance {
        spec: header.spec,
        params: ProblemParams { rho: T::of(header.params.rho), delta: T::of(header.params.delta) },
        n,
        block_rows: header.block_rows,
        f: BlockMatrix::from_dense(dense, row_blocks, col_blocks, spans),
        x_true: x_true.to_vec(),
        y: y.to_vec(),
        rng_seed: header.rng_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(rho: f64, delta: f64) -> ProblemParams<f64> {
        ProblemParams::new(rho, delta).unwrap()
    }

    #[test]
    fn row_counts_follow_the_seed_layout() {
        let spec = CouplingSpec::new(10, 2, 3, 0.4, 0.8);
        let sizes = row_block_sizes(&spec, 10_000).unwrap();
        assert_eq!(sizes.iter().sum::<usize>(), 5200);
        assert_eq!(&sizes[..4], &[800, 800, 800, 400]);
    }

    #[test]
    fn rounding_surplus_goes_to_last_block() {
        // 0.333 * 10 = 3.33 per block, total 33.3 -> 33
        let spec = CouplingSpec::new(10, 1, 0, 0.333, 0.333);
        let sizes = row_block_sizes(&spec, 100).unwrap();
        assert_eq!(sizes.iter().sum::<usize>(), 33);
        assert!(sizes[..9].iter().all(|&s| s == 3));
        assert_eq!(sizes[9], 6);
    }

    #[test]
    fn generation_errors() {
        let spec = CouplingSpec::new(3, 1, 0, 0.5, 0.5);
        assert!(matches!(
            generate_instance(&spec, params(0.3, 1e-6), 10, 1),
            Err(AmpError::Indivisible { .. })
        ));
        let spec = CouplingSpec::new(3, 1, 0, 0.1, 0.1);
        assert!(matches!(
            generate_instance(&spec, params(0.3, 1e-6), 6, 1),
            Err(AmpError::DegenerateRowBlock { .. })
        ));
    }

    #[test]
    fn denoiser_limits() {
        let (m, v) = denoise::<f64>(0.7, 0.5, 1.0).unwrap();
        assert!((m - 0.7 / 1.5).abs() < 1e-15 && (v - 0.5 / 1.5).abs() < 1e-15);
        let (m, _) = denoise::<f64>(0.0, 0.3, 0.2).unwrap();
        assert_eq!(m, 0.0);
        let (m, v) = denoise::<f64>(0.4, 1e12, 0.2).unwrap();
        assert!(m.abs() < 1e-9 && (v - 0.2).abs() < 1e-9);
        assert!(denoise::<f64>(0.1, 0.0, 0.2).is_err());
        // extreme observations stay finite in log space
        let (m, v) = denoise::<f64>(1e3, 1e-12, 0.1).unwrap();
        assert!(m.is_finite() && v.is_finite());
    }

    #[test]
    fn instance_is_reproducible() {
        let spec = CouplingSpec::new(4, 1, 1, 0.5, 0.9);
        let a = generate_instance(&spec, params(0.3, 1e-6), 400, 7).unwrap();
        let b = generate_instance(&spec, params(0.3, 1e-6), 400, 7).unwrap();
        let c = generate_instance(&spec, params(0.3, 1e-6), 400, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x_true, c.x_true);
    }

    #[test]
    fn out_of_band_entries_are_zero() {
        let spec = CouplingSpec::new(5, 1, 1, 0.5, 0.9);
        let inst = generate_instance(&spec, params(0.3, 1e-6), 100, 3).unwrap();
        // row block 0 couples to column blocks 0 and 1 only
        assert!(inst.f.block_entries(0, 3).iter().all(|&x| x == 0.0));
        assert!(inst.f.block_entries(0, 1).iter().any(|&x| x != 0.0));
        let dense = inst.f.to_dense();
        assert_eq!(dense[inst.f.cols() - 1], 0.0);
        assert_eq!(inst.f.get(0, 0), dense[0]);
    }

    #[test]
    fn deviation_of_identical_and_shifted_trajectories() {
        let t: Vec<Vec<f64>> = (0..5).map(|k| vec![0.4 / (k + 1) as f64, 0.3 / (k + 1) as f64]).collect();
        let d = se_amp_deviation(&t, &t, 1e-6);
        assert_eq!(d.max_mean_abs, 0.0);
        assert_eq!(d.max_front, 0);
        let d = se_amp_deviation(&t[1..], &t[..4], 1e-6);
        let step: f64 = (0..4)
            .map(|k| ((t[k][0] - t[k + 1][0]).abs() + (t[k][1] - t[k + 1][1]).abs()) / 2.0)
            .fold(0.0, f64::max);
        assert!(d.max_mean_abs > 0.0);
        assert!((d.max_mean_abs - step).abs() < 1e-15);
    }

    #[test]
    fn persisted_instance_round_trips() {
        let spec = CouplingSpec::new(4, 1, 1, 0.5, 1.0);
        let inst = generate_instance(&spec, params(0.3, 1e-8), 80, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("inst");
        write_instance(&inst, &stem).unwrap();
        let back: Instance<f64> = read_instance(&stem.with_extension("json")).unwrap();
        assert_eq!(back, inst);
        std::fs::write(stem.with_extension("bin"), [0u8; 16]).unwrap();
        assert!(matches!(
            read_instance::<f64>(&stem.with_extension("json")),
            Err(AmpError::Format { .. })
        ));
    }
}
