//! Experiment driver: every study as a reproducible command with JSON configs
//! and CSV/JSON outputs.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use thiserror::Error;

use scse::amp::{generate_instance, validate_against_se, write_instance, AmpError};
use scse::model::{ProblemParams, ShapeFunction, ShapeKind};
use scse::state_evolution::{propagation_speed, se_run_recorded, SEContext, SeError, SeInit, StopRule};
use scse::table::{self, Cell, Format, Table, TableError};
use scse::thresholds::{
    alpha_c_estimate, find_alpha_bp, find_alpha_w, minimize_effective_alpha, phase_diagram, seed_boundary,
    speed_curve, ThresholdError, ThresholdResult, CPROXY_BLOCKS, CPROXY_RANGE, DEFAULT_TOL, SEED_RATIO_MAX,
};

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<ThresholdError> for CliError {
    fn from(e: ThresholdError) -> Self {
        match e {
            ThresholdError::Model(_) | ThresholdError::Tolerance(_) => CliError::Config(e.to_string()),
            ThresholdError::StateEvolution(SeError::Model(_)) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SeError> for CliError {
    fn from(e: SeError) -> Self {
        match e {
            SeError::Model(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<AmpError> for CliError {
    fn from(e: AmpError) -> Self {
        match e {
            AmpError::Indivisible { .. } | AmpError::DegenerateRowBlock { .. } | AmpError::Model(_) => {
                CliError::Config(e.to_string())
            }
            AmpError::Io(_) | AmpError::Json(_) | AmpError::Format { .. } => CliError::Io(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        CliError::Io(e.to_string())
    }
}

macro_rules! ledger {
    () => {
        "\
Built-in choices:
  strong seed for threshold hunting   w_s = 4w+8, alpha_s = 1.0
  bisection tolerance                 5e-4
  alpha_c proxy                       alpha_w at w=16, L=640 (an upper bound)
  seed strength cap                   alpha_s <= 1.5
  propagation                         the whole profile must reach the success threshold
  success threshold                   min(max(10 E_good, 1e-8), 0.01 rho)
  stall detection                     front and profile frozen for 500 iterations
  iteration cap                       100000; front level eps_front = 1e-6
  boundary                            truncate (edge rows keep their partial sums)
Precedence: flags > --config file > defaults."
    };
}

const SE_RUN_HELP: &str = concat!("Defaults: --rho 0.4 --delta 1e-12 --L 240 --w 1 --w-s 12 --alpha-b 0.5 --alpha-s 1.0 \
--max-iter 100000 --eps-front 1e-6 --out se_run.csv", "\n\n", ledger!());
const THRESHOLD_HELP: &str = concat!("Defaults: --kind w --rho 0.4 --delta 1e-12 --w 1 --shape flat --L 240 --tol 5e-4 \
--out threshold.csv. --kind cproxy ignores --w/--L/--shape.", "\n\n", ledger!());
const PHASE_HELP: &str = concat!("Defaults: --rho-grid 0.1,0.2,0.4,0.6 --delta 1e-12 --w-list 1,2,3,4 --shape flat \
--L 240 --tol 5e-4 --out phase_diagram.csv", "\n\n", ledger!());
const SEED_HELP: &str = concat!("Defaults: --rho 0.4 --delta 1e-12 --alpha-b 0.5 --w 1 --L 400 --shape flat \
--ws-range 1:40 --tol 5e-4 --out seed_diagram.csv", "\n\n", ledger!());
const SPEED_HELP: &str = concat!("Defaults: --rho 0.12 --delta 1e-12 --w 3 --L 400 --A -0.5,0,0.5 \
--alpha-b-range 0.18:0.40:0.005 --out speed_curve.csv", "\n\n", ledger!());
const AMP_HELP: &str = concat!("Defaults: --rho 0.4 --delta 1e-12 --L 20 --w 1 --w-s 4 --alpha-b 0.5 --alpha-s 1.0 \
--N 40000 --rng-seed 0 --seeds 5 --iterations 50 --damping 0 --out amp_validate.csv", "\n\n", ledger!());

#[derive(Debug, Parser)]
#[command(name = "scse", version, about = "Seeded spatially coupled compressed sensing experiments", after_help = ledger!())]
pub struct Cli {
    /// Worker threads for grid commands [default: available parallelism]
    #[arg(long, global = true, env = "SCSE_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Iterate state evolution for one coupled ensemble and dump its trajectory.
    #[command(after_help = SE_RUN_HELP)]
    SeRun(Flags),
    /// Locate one threshold (bp, w or cproxy) by bisection.
    #[command(after_help = THRESHOLD_HELP)]
    Threshold(Flags),
    /// Thresholds over a (rho, w) grid.
    #[command(after_help = PHASE_HELP)]
    PhaseDiagram(Flags),
    /// Minimal seed strength for each seed size.
    #[command(after_help = SEED_HELP)]
    SeedDiagram(Flags),
    /// Front speed against the bulk ratio, one column per tilt.
    #[command(after_help = SPEED_HELP)]
    SpeedCurve(Flags),
    /// Compare finite-size message passing with state evolution.
    #[command(after_help = AMP_HELP)]
    AmpValidate(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Flat,
    Tilted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Bp,
    W,
    Cproxy,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON experiment config; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Noise variance
    #[arg(long)]
    pub delta: Option<f64>,
    /// Interaction range
    #[arg(long)]
    pub w: Option<usize>,
    /// Seed size in blocks
    #[arg(long = "w-s")]
    pub w_s: Option<usize>,
    #[arg(long = "alpha-b")]
    pub alpha_b: Option<f64>,
    #[arg(long = "alpha-s")]
    pub alpha_s: Option<f64>,
    /// Number of blocks
    #[arg(long = "L")]
    pub blocks: Option<usize>,
    /// Coupling strength
    #[arg(long = "J")]
    pub strength: Option<f64>,
    #[arg(long, value_enum)]
    pub shape: Option<ShapeArg>,
    /// Tilt of the interaction profile; a comma list for speed-curve
    #[arg(long = "A", value_delimiter = ',', allow_hyphen_values = true)]
    pub tilts: Option<Vec<f64>>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Threshold kind
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long = "rho-grid", value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    #[arg(long = "w-list", value_delimiter = ',')]
    pub w_list: Option<Vec<usize>>,
    /// Seed sizes as a:b or a:b:step
    #[arg(long = "ws-range")]
    pub ws_range: Option<String>,
    /// Bulk ratios as a:b:step
    #[arg(long = "alpha-b-range", allow_hyphen_values = true)]
    pub alpha_b_range: Option<String>,
    /// Signal dimension
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// First instance seed; instances use rng_seed, rng_seed+1, ...
    #[arg(long = "rng-seed")]
    pub rng_seed: Option<u64>,
    /// Number of instances to average
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    #[arg(long = "eps-front")]
    pub eps_front: Option<f64>,
    /// Output file; a .json extension selects JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// se-run: also dump (iteration, block, E) here
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// amp-validate: persist the first instance under this path stem
    #[arg(long)]
    pub persist: Option<PathBuf>,
}

impl Flags {
    fn as_config(&self) -> ExperimentConfig {
        let shape = self.shape.map(|s| match s {
            ShapeArg::Flat => ShapeFunction::flat(),
            ShapeArg::Tilted => ShapeFunction {
                kind: ShapeKind::Tilted,
                tilt: self.tilts.as_ref().and_then(|t| t.first().copied()).unwrap_or(0.0),
            },
        });
        ExperimentConfig {
            rho: self.rho,
            delta: self.delta,
            w: self.w,
            w_s: self.w_s,
            alpha_b: self.alpha_b,
            alpha_s: self.alpha_s,
            blocks: self.blocks,
            strength: self.strength,
            shape,
            tilts: self.tilts.clone(),
            boundary: None,
            tol: self.tol,
            kind: self.kind.map(|k| match k {
                KindArg::Bp => "bp".into(),
                KindArg::W => "w".into(),
                KindArg::Cproxy => "cproxy".into(),
            }),
            rho_grid: self.rho_grid.clone(),
            w_list: self.w_list.clone(),
            ws_range: self.ws_range.clone(),
            alpha_b_range: self.alpha_b_range.clone(),
            n: self.n,
            rng_seed: self.rng_seed,
            seeds: self.seeds,
            iterations: self.iterations,
            damping: self.damping,
            max_iter: self.max_iter,
            eps_front: self.eps_front,
            out: self.out.clone(),
            profiles: self.profiles.clone(),
            persist: self.persist.clone(),
        }
    }

    /// defaults < config file < flags
    pub fn resolve(&self, defaults: ExperimentConfig) -> Result<ExperimentConfig, CliError> {
        let file = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        Ok(defaults.overlay(&file).overlay(&self.as_config()))
    }
}

fn base(rho: f64, out: &str) -> ExperimentConfig {
    ExperimentConfig { rho: Some(rho), delta: Some(1e-12), tol: Some(DEFAULT_TOL), out: Some(out.into()), ..Default::default() }
}

fn defaults_for(cmd: &Command) -> ExperimentConfig {
    match cmd {
        Command::SeRun(_) => ExperimentConfig {
            blocks: Some(240),
            w: Some(1),
            w_s: Some(12),
            alpha_b: Some(0.5),
            alpha_s: Some(1.0),
            max_iter: Some(100_000),
            eps_front: Some(1e-6),
            ..base(0.4, "se_run.csv")
        },
        Command::Threshold(_) => ExperimentConfig {
            kind: Some("w".into()),
            w: Some(1),
            blocks: Some(240),
            ..base(0.4, "threshold.csv")
        },
        Command::PhaseDiagram(_) => ExperimentConfig {
            rho_grid: Some(vec![0.1, 0.2, 0.4, 0.6]),
            w_list: Some(vec![1, 2, 3, 4]),
            blocks: Some(240),
            ..base(0.4, "phase_diagram.csv")
        },
        Command::SeedDiagram(_) => ExperimentConfig {
            alpha_b: Some(0.5),
            w: Some(1),
            blocks: Some(400),
            ws_range: Some("1:40".into()),
            ..base(0.4, "seed_diagram.csv")
        },
        Command::SpeedCurve(_) => ExperimentConfig {
            w: Some(3),
            blocks: Some(400),
            tilts: Some(vec![-0.5, 0.0, 0.5]),
            alpha_b_range: Some("0.18:0.40:0.005".into()),
            ..base(0.12, "speed_curve.csv")
        },
        Command::AmpValidate(_) => ExperimentConfig {
            blocks: Some(20),
            w: Some(1),
            w_s: Some(4),
            alpha_b: Some(0.5),
            alpha_s: Some(1.0),
            n: Some(40_000),
            rng_seed: Some(0),
            seeds: Some(5),
            iterations: Some(50),
            damping: Some(0.0),
            eps_front: Some(1e-6),
            ..base(0.4, "amp_validate.csv")
        },
    }
}

fn provenance(command: &str, cfg: &ExperimentConfig) -> serde_json::Value {
    let mut v = json!({ "command": command });
    if let (Some(obj), serde_json::Value::Object(rest)) = (v.as_object_mut(), cfg.to_json()) {
        obj.extend(rest);
    }
    v
}

fn emit(table: &Table, path: &Path) -> Result<(), CliError> {
    table.write(path, Format::from_path(path))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn out_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("out.csv"))
}

fn se_run_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let spec = cfg.spec()?;
    let params = ProblemParams::new(cfg.get(cfg.rho, "rho")?, cfg.get(cfg.delta, "delta")?)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let ctx = SEContext::from_spec(&spec, params)?;
    let stop = StopRule {
        max_iter: cfg.get(cfg.max_iter, "max_iter")?,
        eps_front: cfg.get(cfg.eps_front, "eps_front")?,
        ..StopRule::default()
    };
    let out = se_run_recorded(&ctx, SeInit::Uninformative, &stop, cfg.profiles.is_some())?;
    let speed = propagation_speed(&out, &ctx);
    println!(
        "status={:?} iterations={} front={} max_mse={:.3e} speed={:.5}",
        out.status,
        out.iterations,
        out.front_trace.last().map_or(0, |f| f.1),
        out.final_profile.max(),
        speed.speed
    );
    let prov = provenance("se-run", cfg);
    emit(&table::trajectory_table(&out, prov.clone()), &out_path(cfg))?;
    if let Some(p) = &cfg.profiles {
        let profiles: Vec<Vec<f64>> = out.profiles.iter().map(|p| p.0.clone()).collect();
        emit(&table::block_table(&profiles, "E", prov), p)?;
    }
    Ok(())
}

fn threshold_row(r: &ThresholdResult, tol: f64, prov: serde_json::Value) -> Table {
    let mut t = Table::new(
        prov,
        ["kind", "rho", "delta", "w", "L", "A", "value", "bracket_lo", "bracket_hi", "tol", "evaluations"],
    );
    let kind = serde_json::to_value(r.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
    t.rows.push(vec![
        Cell::Text(kind),
        r.meta.rho.into(),
        r.meta.delta.into(),
        r.meta.w.into(),
        r.meta.blocks.into(),
        r.meta.shape.slope().into(),
        r.value.into(),
        r.bracket.0.into(),
        r.bracket.1.into(),
        tol.into(),
        r.evaluations.into(),
    ]);
    t
}

fn threshold_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let rho = cfg.get(cfg.rho, "rho")?;
    let delta = cfg.get(cfg.delta, "delta")?;
    let tol = cfg.get(cfg.tol, "tol")?;
    let kind = cfg.kind.as_deref().unwrap_or("w");
    let r = match kind {
        "bp" => find_alpha_bp(rho, delta, tol)?,
        "w" => find_alpha_w(rho, delta, cfg.get(cfg.w, "w")?, cfg.resolved_shape(), cfg.get(cfg.blocks, "L")?, tol)?,
        "cproxy" => alpha_c_estimate(rho, delta, tol, None)?,
        other => return Err(CliError::Config(format!("unknown threshold kind {other:?} (bp, w, cproxy)"))),
    };
    let name = match kind {
        "bp" => "alpha_BP",
        "w" => "alpha_w",
        _ => "alpha_c_proxy",
    };
    println!(
        "{name} = {:.4} ± {:.4}  (bracket [{:.5}, {:.5}], {} state-evolution runs)",
        r.value,
        tol,
        r.bracket.0,
        r.bracket.1,
        r.evaluations
    );
    if kind == "cproxy" {
        println!("proxy: alpha_w at w={CPROXY_RANGE}, L={CPROXY_BLOCKS}; an upper bound on alpha_c");
    }
    emit(&threshold_row(&r, tol, provenance("threshold", cfg)), &out_path(cfg))
}

fn phase_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let rhos = cfg.rho_grid.clone().ok_or_else(|| CliError::Config("missing rho_grid".into()))?;
    let ws = cfg.w_list.clone().ok_or_else(|| CliError::Config("missing w_list".into()))?;
    if rhos.is_empty() || ws.is_empty() {
        return Err(CliError::Config("rho_grid and w_list must be non-empty".into()));
    }
    let rows = phase_diagram(
        &rhos,
        cfg.get(cfg.delta, "delta")?,
        &ws,
        cfg.resolved_shape(),
        cfg.get(cfg.blocks, "L")?,
        cfg.get(cfg.tol, "tol")?,
    );
    for r in &rows {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "rho={:.3} w={:>2} alpha_bp={} alpha_w={} alpha_c_proxy={}{}",
            r.rho,
            r.w,
            f(r.alpha_bp),
            f(r.alpha_w),
            f(r.alpha_c_proxy),
            r.error.as_ref().map_or(String::new(), |e| format!("  [{e}]"))
        );
    }
    emit(&table::phase_table(&rows, provenance("phase-diagram", cfg)), &out_path(cfg))
}

fn seed_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let ws = config::parse_int_range(cfg.ws_range.as_deref().unwrap_or("1:40"))?;
    let b = seed_boundary(
        cfg.get(cfg.rho, "rho")?,
        cfg.get(cfg.delta, "delta")?,
        cfg.get(cfg.alpha_b, "alpha_b")?,
        cfg.get(cfg.w, "w")?,
        cfg.get(cfg.blocks, "L")?,
        cfg.resolved_shape(),
        &ws,
        cfg.get(cfg.tol, "tol")?,
    )?;
    for p in &b.points {
        println!("w_s={:>3} alpha_s*={:.4} alpha_eff={:.5}", p.w_s, p.alpha_s_star, p.alpha_eff);
    }
    if !b.non_propagating.is_empty() {
        println!("no propagation up to alpha_s={SEED_RATIO_MAX} for w_s in {:?}", b.non_propagating);
    }
    match minimize_effective_alpha(&b) {
        Ok(p) => println!("optimum: w_s={} alpha_s={:.4} alpha_eff={:.5}", p.w_s, p.alpha_s_star, p.alpha_eff),
        Err(_) => println!("no propagating seed"),
    }
    emit(&table::seed_table(&b.points, provenance("seed-diagram", cfg)), &out_path(cfg))
}

fn speed_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let grid = config::parse_float_range(cfg.alpha_b_range.as_deref().unwrap_or("0.18:0.40:0.005"))?;
    let tilts = cfg.tilts.clone().unwrap_or_else(|| vec![0.0]);
    for &a in &tilts {
        ShapeFunction::with_tilt(a).validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let pts = speed_curve(
        cfg.get(cfg.rho, "rho")?,
        cfg.get(cfg.delta, "delta")?,
        cfg.get(cfg.w, "w")?,
        cfg.get(cfg.blocks, "L")?,
        &tilts,
        &grid,
    )?;
    let t = table::speed_table(&pts, &tilts, provenance("speed-curve", cfg));
    println!("{}", t.columns.join("  "));
    for row in &t.rows {
        let cells: Vec<String> = row.iter().map(|c| c.as_f64().map_or("-".into(), |v| format!("{v:.5}"))).collect();
        println!("{}", cells.join("  "));
    }
    emit(&t, &out_path(cfg))
}

fn amp_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let spec = cfg.spec()?;
    let params = ProblemParams::new(cfg.get(cfg.rho, "rho")?, cfg.get(cfg.delta, "delta")?)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let n = cfg.get(cfg.n, "N")?;
    let first = cfg.get(cfg.rng_seed, "rng_seed")?;
    let seeds: Vec<u64> = (0..cfg.get(cfg.seeds, "seeds")? as u64).map(|k| first + k).collect();
    if let Some(stem) = &cfg.persist {
        let inst = generate_instance(&spec, params, n, first)?;
        write_instance(&inst, stem)?;
        eprintln!("persisted instance {}", stem.display());
    }
    let v = validate_against_se(
        &spec,
        params,
        n,
        &seeds,
        cfg.get(cfg.iterations, "iterations")?,
        cfg.get(cfg.damping, "damping")?,
        cfg.get(cfg.eps_front, "eps_front")?,
    )?;
    println!(
        "max mean-abs deviation {:.4e} ({:.4} rho), max front deviation {} blocks, {} seeds",
        v.deviation.max_mean_abs,
        v.deviation.max_mean_abs / params.rho,
        v.deviation.max_front,
        seeds.len()
    );
    let mut t = Table::new(provenance("amp-validate", cfg), ["iteration", "block", "mse", "se_mse"]);
    for (it, (amp, se)) in v.amp.iter().zip(&v.se).enumerate() {
        for (b, (a, s)) in amp.iter().zip(se).enumerate() {
            t.rows.push(vec![(it + 1).into(), b.into(), (*a).into(), (*s).into()]);
        }
    }
    emit(&t, &out_path(cfg))
}

fn dispatch(cmd: &Command) -> Result<(), CliError> {
    let (flags, run): (&Flags, fn(&ExperimentConfig) -> Result<(), CliError>) = match cmd {
        Command::SeRun(f) => (f, se_run_cmd),
        Command::Threshold(f) => (f, threshold_cmd),
        Command::PhaseDiagram(f) => (f, phase_cmd),
        Command::SeedDiagram(f) => (f, seed_cmd),
        Command::SpeedCurve(f) => (f, speed_cmd),
        Command::AmpValidate(f) => (f, amp_cmd),
    };
    let cfg = flags.resolve(defaults_for(cmd))?;
    log::debug!("resolved config: {}", cfg.to_json());
    run(&cfg)
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("configuration error: --jobs must be positive");
            return 2;
        }
        pool = pool.num_threads(j);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
