use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use gram_edge::dbm::{self, DbmConfig, DbmMode};
use gram_edge::dyson::{self, EdgeConfig};
use gram_edge::freeconv::{self, RfcQuery};
use gram_edge::model::{BandedNoise, DoublyHeteroscedastic};
use gram_edge::montecarlo::{
    self, simulate_critical_values_with, RunStamp, TwCheckOptions, TwTarget, SCHEMA_VERSION,
};
use gram_edge::spectra::gram_eigs;
use gram_edge::stats::{estimate_r, Statistic};
use gram_edge::{io, CriticalTable, Error, Setting, VarianceProfile};

/// Signal-number detection and edge-statistics experiments for Gram
/// matrices with heterogeneous noise.
#[derive(Debug, Parser, Serialize)]
#[command(name = "gram-edge", version)]
pub struct Cli {
    /// Worker threads (defaults to the number of logical cores).
    #[arg(long, global = true, env = "GRAM_EDGE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Simulate Wishart critical values of G1 and G2 for k = 1..k_max.
    CriticalValues(CriticalArgs),
    /// Estimate the number of signals in a data matrix.
    Detect(DetectArgs),
    /// Type-I error or power of the sequential tests.
    Simulate(SimulateArgs),
    /// Right spectral edge and square-root coefficient of a variance profile.
    DysonEdge(DysonArgs),
    /// Right edge of a rectangular free convolution.
    FreeconvEdge(FreeconvArgs),
    /// Compare rescaled edge eigenvalues with the GOE Tracy-Widom law.
    TwCheck(TwArgs),
    /// Simulate rectangular Dyson Brownian motion.
    Dbm(DbmArgs),
}

#[derive(Debug, Args, Serialize)]
struct CriticalArgs {
    #[arg(long)]
    p: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    k_max: usize,
    /// Test level; the tabulated values are at 0.1.
    #[arg(long, default_value_t = 0.1)]
    level: f64,
    /// Wishart replicates (the published table uses 5000).
    #[arg(long, default_value_t = 5000)]
    reps: usize,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    /// Also write the table to this JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct DetectArgs {
    /// Data matrix, p x n (CSV with rows = coordinates, or the binary format).
    data: PathBuf,
    /// Largest number of signals considered plus one.
    #[arg(long, default_value_t = 5)]
    r_star: usize,
    #[arg(long, default_value_t = 0.1)]
    level: f64,
    /// Critical-value table produced by `critical-values`; the published
    /// table is used when omitted.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Write the per-step traces as CSV to this path.
    #[arg(long)]
    trace_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SimMode {
    Null,
    Power,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = SimMode::Null)]
    mode: SimMode,
    /// Noise setting: I (doubly heteroscedastic), II (sparse), III (banded).
    #[arg(long, default_value = "I")]
    setting: String,
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Aspect ratio p / n.
    #[arg(long, default_value_t = 2.0)]
    cn: f64,
    /// Replicates (the simulation study uses 2000).
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    /// Number of true signals under the null.
    #[arg(long, default_value_t = 3)]
    r0: usize,
    #[arg(long, default_value_t = 5)]
    r_star: usize,
    #[arg(long, default_value_t = 0.1)]
    level: f64,
    /// Comma-separated signal strengths for power runs.
    #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20,25,30")]
    d_grid: Vec<f64>,
    /// Critical-value table; simulated on the fly (with `--table-reps`
    /// replicates) when omitted.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    table_reps: usize,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    /// Write per-replicate (null) or per-strength (power) rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct DysonArgs {
    /// constant, I, III, or a path to a p x n matrix of variances.
    #[arg(long, default_value = "constant")]
    profile: String,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    n: usize,
    /// Write the density on a uniform grid over [0, 1.05 λ₊] as CSV.
    #[arg(long)]
    density_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 400)]
    grid_points: usize,
}

#[derive(Debug, Args, Serialize)]
struct FreeconvArgs {
    /// Initial spectrum: `zeros`, `mp` (Marchenko-Pastur quantiles) or a
    /// file with one value per row.
    #[arg(long, default_value = "zeros")]
    d: String,
    #[arg(long)]
    p: Option<usize>,
    /// Aspect ratio p / n, in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    cn: f64,
    #[arg(long, default_value_t = 1.0)]
    t: f64,
    /// Also fit the square-root coefficient of the density and compare.
    #[arg(long)]
    consistency: bool,
}

#[derive(Debug, Args, Serialize)]
struct TwArgs {
    /// constant, I, III, or a path to a p x n matrix of variances.
    #[arg(long, default_value = "constant")]
    profile: String,
    #[arg(long, default_value_t = 500)]
    p: usize,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Strong signals added before looking at the first non-outlier.
    #[arg(long, default_value_t = 0)]
    r: usize,
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    #[arg(long, default_value_t = 1000)]
    p_ref: usize,
    #[arg(long, default_value_t = 5000)]
    ref_reps: usize,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    /// Directory for the cached GOE reference sample.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Also compare the next eigenvalues, up to this many in total.
    #[arg(long, default_value_t = 1)]
    joint_k: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum DbmRun {
    /// Compare SDE paths with direct matrix draws.
    Couple,
    /// One path, optionally saving its trajectory.
    Path,
}

#[derive(Debug, Args, Serialize)]
struct DbmArgs {
    #[arg(long, value_enum, default_value_t = DbmRun::Couple)]
    run: DbmRun,
    #[arg(long, default_value_t = 50)]
    p: usize,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    t: f64,
    #[arg(long, default_value_t = 1e-5)]
    dt: f64,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Initial spectrum file (one value per row); a normalized Wishart
    /// spectrum drawn from `--seed` when omitted.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Evolve singular values instead of eigenvalues.
    #[arg(long)]
    singular: bool,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    /// Trajectory CSV for `--run path`.
    #[arg(long)]
    trajectory_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    record_every: usize,
}

/// A failed command with its exit code.
pub struct Failure {
    pub code: u8,
    pub error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let code = match &error {
            Error::InvalidParameter(_)
            | Error::InvalidShape(_)
            | Error::InvalidInput(_)
            | Error::Parse { .. }
            | Error::Io(_)
            | Error::Json(_) => 2,
            _ => 3,
        };
        Self { code, error }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Error::InvalidParameter(msg.into()).into()
}

/// Progress lines on stderr; the library reports every 5% of replicates.
fn progress(label: &'static str) -> impl Fn(usize, usize) + Sync {
    move |done, total| eprintln!("{label}: {done}/{total}")
}

fn emit(command: &str, args: &impl Serialize, seed: Option<u64>, result: Value) -> CmdResult {
    let stamp = RunStamp::new(seed.unwrap_or(0), 0);
    let doc = json!({
        "schema": SCHEMA_VERSION,
        "metadata": {
            "command": command,
            "args": args,
            "seed": seed,
            "version": stamp.version,
            "git_describe": stamp.git_describe,
        },
        "result": result,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(Error::from)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::from(e).into()),
        _ => Ok(()),
    }
}

fn to_value(v: &impl Serialize) -> std::result::Result<Value, Failure> {
    Ok(serde_json::to_value(v).map_err(Error::from)?)
}

fn create(path: &Path) -> std::result::Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path).map_err(Error::from)?))
}

pub fn run(cli: Cli) -> CmdResult {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::SimulationFailure(e.to_string()))?;
    }
    match &cli.command {
        Command::CriticalValues(a) => critical_values(a),
        Command::Detect(a) => detect(a),
        Command::Simulate(a) => simulate(a),
        Command::DysonEdge(a) => dyson_edge(a),
        Command::FreeconvEdge(a) => freeconv_edge(a),
        Command::TwCheck(a) => tw_check(a),
        Command::Dbm(a) => run_dbm(a),
    }
}

fn critical_values(a: &CriticalArgs) -> CmdResult {
    let table = simulate_critical_values_with(
        a.p,
        a.n,
        a.k_max,
        a.level,
        a.reps,
        a.seed,
        &progress("critical-values"),
    )?;
    if let Some(out) = &a.out {
        table.save(out)?;
    }
    emit("critical-values", a, Some(a.seed), to_value(&table)?)
}

fn load_table(path: Option<&Path>) -> gram_edge::Result<CriticalTable> {
    match path {
        Some(p) => CriticalTable::load(p),
        None => Ok(CriticalTable::reference()),
    }
}

fn detect(a: &DetectArgs) -> CmdResult {
    let y = io::read_matrix(&a.data)?;
    let (p, n) = y.shape();
    if a.r_star == 0 || a.r_star + 2 > p.min(n) {
        return Err(usage(format!(
            "r* = {} needs r* + 2 <= min(p, n) = {}",
            a.r_star,
            p.min(n)
        )));
    }
    let table = load_table(a.table.as_deref())?;
    let spectrum = gram_eigs(&y)?;
    let mut estimates = serde_json::Map::new();
    let mut traces = Vec::new();
    for which in Statistic::ALL {
        let thresholds = table.thresholds(p, n, a.r_star, which, a.level)?;
        let est = estimate_r(
            spectrum.values(),
            a.r_star - 1,
            a.r_star,
            &thresholds,
            which,
        )?;
        estimates.insert(which.name().to_string(), to_value(&est)?);
        traces.extend(est.trace);
    }
    if let Some(path) = &a.trace_csv {
        gram_edge::stats::write_trace_csv(create(path)?, &traces)?;
    }
    let top: Vec<f64> = spectrum.top(a.r_star + 2).to_vec();
    emit(
        "detect",
        a,
        None,
        json!({ "p": p, "n": n, "top_eigenvalues": top, "estimates": estimates }),
    )
}

fn p_from_ratio(n: usize, cn: f64) -> std::result::Result<usize, Failure> {
    if !(cn > 0.0 && cn.is_finite()) {
        return Err(usage("--cn must be positive"));
    }
    let p = (n as f64 * cn).round() as usize;
    if p == 0 {
        return Err(usage("n * cn rounds to zero rows"));
    }
    Ok(p)
}

fn simulate(a: &SimulateArgs) -> CmdResult {
    let setting: Setting = a.setting.parse()?;
    let p = p_from_ratio(a.n, a.cn)?;
    let table = match &a.table {
        Some(path) => CriticalTable::load(path)?,
        None => {
            let k_max = a.r_star.min(p.min(a.n).saturating_sub(2));
            simulate_critical_values_with(
                p,
                a.n,
                k_max,
                a.level,
                a.table_reps,
                a.seed,
                &progress("critical-values"),
            )?
        }
    };
    let report = match a.mode {
        SimMode::Null => montecarlo::simulate_type1_with(
            setting,
            p,
            a.n,
            a.r0,
            a.r_star,
            a.level,
            a.reps,
            &table,
            a.seed,
            &progress("simulate"),
        )?,
        SimMode::Power => montecarlo::simulate_power_with(
            setting,
            p,
            a.n,
            &a.d_grid,
            a.r_star,
            a.level,
            a.reps,
            &table,
            a.seed,
            &progress("simulate"),
        )?,
    };
    if let Some(path) = &a.csv {
        report.write_csv(create(path)?)?;
    }
    emit("simulate", a, Some(a.seed), to_value(&report)?)
}

fn named_profile(name: &str, p: usize, n: usize) -> gram_edge::Result<VarianceProfile> {
    match name {
        "constant" => VarianceProfile::white(p, n),
        "I" | "1" => {
            let (a, b) = DoublyHeteroscedastic::setting_one_spectra(p, n);
            Ok(DoublyHeteroscedastic::diagonal(a, b)?.effective_profile())
        }
        "III" | "3" => Ok(BandedNoise::new(p, n, BandedNoise::DEFAULT_BANDWIDTH)?.mean_profile()),
        path => {
            let s = io::read_matrix(Path::new(path))?;
            if s.shape() != (p, n) {
                return Err(Error::InvalidShape(format!(
                    "profile file is {} x {} but --p {p} --n {n} was given",
                    s.nrows(),
                    s.ncols()
                )));
            }
            VarianceProfile::new(s)
        }
    }
}

fn dyson_edge(a: &DysonArgs) -> CmdResult {
    let profile = named_profile(&a.profile, a.p, a.n)?;
    let edge = dyson::find_edge(&profile, &EdgeConfig::default())?;
    if let Some(path) = &a.density_csv {
        let points = a.grid_points.max(2);
        let grid: Vec<f64> = (0..points)
            .map(|i| 1.05 * edge.lambda_plus * (i as f64 + 0.5) / points as f64)
            .collect();
        let curve = dyson::density(&profile, &grid, 1e-6 * edge.lambda_plus)?;
        dyson::write_density_csv(create(path)?, &curve)?;
    }
    let mut result = to_value(&edge)?;
    result["c_n"] = json!(profile.c_n());
    result["frak_m"] = json!(profile.frak_m());
    emit("dyson-edge", a, None, result)
}

fn read_column(path: &Path) -> gram_edge::Result<Vec<f64>> {
    let m = io::read_matrix(path)?;
    if m.ncols() != 1 && m.nrows() != 1 {
        return Err(Error::InvalidShape(format!(
            "expected a single row or column, got {} x {}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.iter().copied().collect())
}

fn mp_quantiles(p: usize, cn: f64) -> gram_edge::Result<Vec<f64>> {
    let n = (p as f64 / cn).round() as usize;
    let profile = VarianceProfile::white(p, n)?;
    let edge = dyson::find_edge(&profile, &EdgeConfig::default())?;
    Ok(dyson::classical_locations(&profile, &edge, p, 2000)?.gamma)
}

fn freeconv_edge(a: &FreeconvArgs) -> CmdResult {
    if !(a.cn > 0.0 && a.cn <= 1.0) {
        return Err(usage("--cn must lie in (0, 1]"));
    }
    let need_p = || a.p.ok_or_else(|| usage(format!("--d {} needs --p", a.d)));
    let d = match a.d.as_str() {
        "zeros" => vec![0.0; need_p()?],
        "mp" => mp_quantiles(need_p()?, a.cn)?,
        path => read_column(Path::new(path))?,
    };
    let q = RfcQuery::new(d, a.cn, a.t)?;
    let edge = freeconv::find_rfc_edge(&q)?;
    let mut result = json!({ "p": q.p(), "c": q.c(), "t": q.t(), "edge": to_value(&edge)? });
    if a.consistency {
        result["consistency"] = to_value(&freeconv::edge_consistency(&q)?)?;
    }
    emit("freeconv-edge", a, None, result)
}

fn tw_check(a: &TwArgs) -> CmdResult {
    let target = match a.profile.as_str() {
        "I" | "1" => TwTarget::Setting(Setting::I),
        "II" | "2" => TwTarget::Setting(Setting::II),
        "III" | "3" => TwTarget::Setting(Setting::III),
        name => TwTarget::Profile(named_profile(name, a.p, a.n)?),
    };
    let reference = match &a.cache_dir {
        Some(dir) => montecarlo::tw_reference_cached(a.p_ref, a.ref_reps, a.seed, dir)?,
        None => montecarlo::tw_reference(a.p_ref, a.ref_reps, a.seed)?,
    };
    let options = TwCheckOptions {
        joint_k: a.joint_k,
        ..TwCheckOptions::default()
    };
    let check = montecarlo::tw_check_with(
        &target,
        a.p,
        a.n,
        a.r,
        a.reps,
        a.seed.wrapping_add(1),
        &reference,
        &options,
        &progress("tw-check"),
    )?;
    let mut result = to_value(&check)?;
    result["reference_median"] = json!(reference.median());
    emit("tw-check", a, Some(a.seed), result)
}

fn wishart_spectrum(p: usize, n: usize, seed: u64) -> gram_edge::Result<Vec<f64>> {
    let s = gram_edge::model::gen_wishart(p, n, seed)?;
    Ok(s.values().iter().map(|v| v / n as f64).collect())
}

fn run_dbm(a: &DbmArgs) -> CmdResult {
    let init = match &a.init {
        Some(path) => {
            let mut v = read_column(path)?;
            v.sort_by(|x, y| y.total_cmp(x));
            v
        }
        None => wishart_spectrum(a.p, a.n, a.seed)?,
    };
    if a.init.is_some() && init.len() != a.p {
        return Err(usage(format!(
            "initial spectrum has {} values but --p is {}",
            init.len(),
            a.p
        )));
    }
    let mode = if a.singular {
        DbmMode::Singular
    } else {
        DbmMode::Eigen
    };
    match a.run {
        DbmRun::Couple => {
            let report = dbm::couple_check_with(
                &init,
                a.p,
                a.n,
                a.t,
                a.dt,
                a.reps,
                a.seed,
                mode,
                &progress("dbm"),
            )?;
            emit("dbm", a, Some(a.seed), to_value(&report)?)
        }
        DbmRun::Path => {
            let mut cfg = DbmConfig::new(a.n, a.t, a.dt, a.seed);
            cfg.mode = mode;
            if a.trajectory_csv.is_some() {
                cfg.record_every = a.record_every.max(1);
            }
            let state = dbm::simulate_rdbm_with(&init, &cfg)?;
            if let Some(path) = &a.trajectory_csv {
                let mut out = create(path)?;
                state.write_trajectory_csv(&mut out)?;
                out.flush().map_err(Error::from)?;
            }
            emit("dbm", a, Some(a.seed), to_value(&state)?)
        }
    }
}
