use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use saddle_core::dynamics::{simulate, uniform_grid};
use saddle_core::experiment::output::{limit_path_table, trajectory_table, write_json, CsvTable};
use saddle_core::experiment::{
    compare_instance, hitting_instance, read_instance_file, run_figure1, ExperimentConfig, ExperimentError,
    GridSpec, InstanceSource, Result,
};
use saddle_core::lcp::QpOptions;
use saddle_core::problem::{generate_direct, generate_rejection, InstanceFile, InstanceMeta};
use saddle_core::{
    compute_path, enumerate_fixed_points, solve_lcp, solve_lcp_bruteforce, solve_qp_nonneg, IndexSet,
    Initialization, LcpSolution, ProblemInstance, SimulationOptions,
};

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Debug, Parser)]
#[command(name = "saddle", version, about = "Saddle-to-saddle dynamics of diagonal linear networks")]
struct Cli {
    /// Seed for instance generators.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Encoding for tabular output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Generator {
    Rejection,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LcpMethod {
    Pivot,
    Bruteforce,
    Qp,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an instance and write it as JSON.
    Gen {
        #[arg(long, value_enum, default_value_t = Generator::Rejection)]
        generator: Generator,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 10_000_000)]
        max_attempts: u64,
        #[arg(long, default_value_t = 0.2)]
        offdiag_scale: f64,
        /// Output file; defaults to `<out-dir>/instance.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve `w = q + Mz`, `w, z >= 0`, `wᵀz = 0`.
    LcpSolve {
        /// Instance JSON providing `M` (and `r` for `--s`).
        #[arg(long, required_unless_present = "problem", conflicts_with = "problem")]
        instance: Option<PathBuf>,
        /// Raw problem JSON `{"M": [[..]], "q": [..]}`.
        #[arg(long)]
        problem: Option<PathBuf>,
        /// Explicit `q`, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "s")]
        q: Option<Vec<f64>>,
        /// Use `q = k − s·r`.
        #[arg(long)]
        s: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = LcpMethod::Pivot)]
        method: LcpMethod,
    },
    /// List all 2^d fixed points.
    FixedPoints {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Integrate the flow and sample it on a uniform grid in s.
    Simulate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long = "C", value_delimiter = ',')]
        c: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<f64>>,
        #[arg(long)]
        s_max: f64,
        /// Number of grid points on [0, s_max].
        #[arg(long, default_value_t = 201)]
        grid: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Output file; defaults to `<out-dir>/trajectory.<format>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Breakpoints, active sets and the regularization path.
    LimitPath {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<f64>>,
        /// Grid points for the path table on (0, s_max_factor·s*].
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long, default_value_t = 1.5)]
        s_max_factor: f64,
    },
    /// Simulated trajectories against the limit process over an ε sweep.
    Compare(SweepArgs),
    /// Hitting times of a small ball around the minimizer over an ε sweep.
    HittingTime(SweepArgs),
    /// Vector field, fixed points and trajectories of a two-dimensional instance.
    Figure1(SweepArgs),
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// JSON experiment config; other flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    #[arg(long = "C", value_delimiter = ',')]
    c: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<f64>>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    exclusion_fraction: Option<f64>,
    #[arg(long)]
    eta_fraction: Option<f64>,
}

impl SweepArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.instance) {
            (Some(path), _) => ExperimentConfig::from_json_file(path)?,
            (None, Some(instance)) => ExperimentConfig::new(
                InstanceSource::File {
                    path: instance.clone(),
                },
                vec![1e-8, 1e-20],
            ),
            (None, None) => {
                return Err(ExperimentError::Config("either --config or --instance is required".into()))
            }
        };
        if let (Some(_), Some(instance)) = (&self.config, &self.instance) {
            cfg.instance = InstanceSource::File {
                path: instance.clone(),
            };
        }
        if let Some(e) = &self.epsilons {
            cfg.epsilons = e.clone();
        }
        if self.c.is_some() {
            cfg.c = self.c.clone();
        }
        if self.k.is_some() {
            cfg.k = self.k.clone();
        }
        if let Some(points) = self.grid {
            cfg.grid = GridSpec { points, ..cfg.grid };
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(x) = self.exclusion_fraction {
            cfg.exclusion_fraction = x;
        }
        if let Some(x) = self.eta_fraction {
            cfg.eta_fraction = x;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_instance(path: &Path) -> Result<ProblemInstance> {
    Ok(read_instance_file(path)?.to_instance()?)
}

fn vector_or_ones(v: &Option<Vec<f64>>, d: usize, name: &str) -> Result<DVector<f64>> {
    match v {
        None => Ok(DVector::from_element(d, 1.0)),
        Some(v) if v.len() == d => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(ExperimentError::Config(format!(
            "--{name} has {} entries, instance dimension is {d}",
            v.len()
        ))),
    }
}

fn output_dir(cli: &Cli, config: Option<&ExperimentConfig>) -> PathBuf {
    match config.and_then(|c| c.output_dir.clone()) {
        Some(dir) if cli.out_dir == Path::new(".") => dir,
        _ => cli.out_dir.clone(),
    }
}

fn write_table(table: &CsvTable, rows_json: &impl Serialize, format: Format, path: &Path) -> Result<()> {
    match format {
        Format::Csv => table.write(path),
        Format::Json => write_json(path, rows_json),
    }
}

fn extension(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

#[derive(Serialize)]
struct LcpOutput<'a> {
    method: &'static str,
    q: Vec<f64>,
    #[serde(flatten)]
    solution: &'a LcpSolution,
}

#[derive(Serialize)]
struct LimitPathOutput<'a> {
    breakpoints: &'a [f64],
    active_sets: Vec<&'a IndexSet>,
    fixed_points: Vec<&'a [f64]>,
    s_star: f64,
    k: &'a [f64],
}

fn cmd_gen(
    cli: &Cli,
    generator: Generator,
    n: Option<usize>,
    d: usize,
    max_attempts: u64,
    offdiag_scale: f64,
    out: &Option<PathBuf>,
) -> Result<()> {
    let (instance, n_used, name) = match generator {
        Generator::Rejection => {
            let n = n.unwrap_or(d + 1);
            let data = generate_rejection(n, d, cli.seed, max_attempts)?;
            (ProblemInstance::from_data(data)?, n, "rejection")
        }
        Generator::Direct => (generate_direct(d, cli.seed, offdiag_scale)?.0, d, "direct"),
    };
    let file = InstanceFile::from_instance(
        &instance,
        InstanceMeta {
            seed: Some(cli.seed),
            generator: name.into(),
            n: Some(n_used),
            d,
        },
    );
    let path = out.clone().unwrap_or_else(|| cli.out_dir.join("instance.json"));
    write_json(&path, &file)?;
    say!("{}", path.display());
    Ok(())
}

#[derive(Deserialize)]
struct LcpProblem {
    #[serde(rename = "M")]
    m: Vec<Vec<f64>>,
    q: Vec<f64>,
}

fn lcp_inputs(
    instance: Option<&Path>,
    problem: Option<&Path>,
    q: &Option<Vec<f64>>,
    s: Option<f64>,
    k: &Option<Vec<f64>>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if let Some(path) = problem {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let raw: LcpProblem = serde_json::from_str(&text)?;
        let d = raw.q.len();
        if raw.m.len() != d || raw.m.iter().any(|row| row.len() != d) {
            return Err(ExperimentError::Config(format!("M must be {d}x{d} to match q")));
        }
        let m = DMatrix::from_fn(d, d, |i, j| raw.m[i][j]);
        let q = vector_or_ones(&Some(q.clone().unwrap_or(raw.q)), d, "q")?;
        return Ok((m, q));
    }
    let inst = load_instance(instance.expect("clap requires --instance or --problem"))?;
    let d = inst.d();
    let q = match (q, s) {
        (Some(q), _) => vector_or_ones(&Some(q.clone()), d, "q")?,
        (None, Some(s)) => vector_or_ones(k, d, "k")? - inst.r() * s,
        (None, None) => return Err(ExperimentError::Config("either --q or --s is required".into())),
    };
    Ok((inst.m().clone(), q))
}

fn cmd_lcp(
    cli: &Cli,
    instance: Option<&Path>,
    problem: Option<&Path>,
    q: &Option<Vec<f64>>,
    s: Option<f64>,
    k: &Option<Vec<f64>>,
    method: LcpMethod,
) -> Result<()> {
    let (m, q) = lcp_inputs(instance, problem, q, s, k)?;
    let d = q.len();
    let solution = match method {
        LcpMethod::Pivot => solve_lcp(&q, &m)?,
        LcpMethod::Bruteforce => solve_lcp_bruteforce(&q, &m)?,
        LcpMethod::Qp => {
            let qp = solve_qp_nonneg(&q, &m, QpOptions::default())?;
            let w = &q + &m * &qp.theta;
            LcpSolution {
                support: qp.support(),
                w: w.iter().copied().collect(),
                z: qp.theta.iter().copied().collect(),
                pivots: qp.iterations,
                condition_estimate: f64::NAN,
            }
        }
    };
    let name = match method {
        LcpMethod::Pivot => "pivot",
        LcpMethod::Bruteforce => "bruteforce",
        LcpMethod::Qp => "qp",
    };
    match cli.format {
        Format::Json => {
            let out = LcpOutput {
                method: name,
                q: q.iter().copied().collect(),
                solution: &solution,
            };
            say!("{}", serde_json::to_string_pretty(&out)?);
        }
        Format::Csv => {
            let mut t = CsvTable::new("lcp", ["index", "q", "z", "w", "active"].map(String::from).to_vec());
            for i in 0..d {
                let active = if solution.support.contains(i) { 1.0 } else { 0.0 };
                t.push(vec![i as f64, q[i], solution.z[i], solution.w[i], active]);
            }
            let _ = std::io::stdout().lock().write_all(&t.to_bytes()?);
        }
    }
    Ok(())
}

fn cmd_fixed_points(cli: &Cli, instance: &Path) -> Result<()> {
    let inst = load_instance(instance)?;
    let d = inst.d();
    let fps = enumerate_fixed_points(&inst)?;
    let header = std::iter::once("support_size".to_string())
        .chain((1..=d).map(|i| format!("in_{i}")))
        .chain((1..=d).map(|i| format!("theta_{i}")))
        .chain(std::iter::once("residual".to_string()))
        .collect();
    let mut t = CsvTable::new("fixed_points", header);
    for fp in &fps {
        let mut row = vec![fp.support.len() as f64];
        row.extend((0..d).map(|i| if fp.support.contains(i) { 1.0 } else { 0.0 }));
        row.extend_from_slice(&fp.theta);
        row.push(fp.residual);
        t.push(row);
    }
    let path = cli.out_dir.join(format!("fixed_points.{}", extension(cli.format)));
    write_table(&t, &fps, cli.format, &path)?;
    match cli.format {
        Format::Json => say!("{}", serde_json::to_string_pretty(&fps)?),
        Format::Csv => {
            let _ = std::io::stdout().lock().write_all(&t.to_bytes()?);
        }
    }
    eprintln!("{} fixed points -> {}", fps.len(), path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    cli: &Cli,
    instance: &Path,
    epsilon: f64,
    c: &Option<Vec<f64>>,
    k: &Option<Vec<f64>>,
    s_max: f64,
    grid: usize,
    tol: f64,
    out: &Option<PathBuf>,
) -> Result<()> {
    let inst = load_instance(instance)?;
    let d = inst.d();
    if s_max.is_nan() || s_max <= 0.0 || grid < 2 {
        return Err(ExperimentError::Config("need s_max > 0 and at least 2 grid points".into()));
    }
    let init = Initialization::new(vector_or_ones(c, d, "C")?, vector_or_ones(k, d, "k")?, epsilon)?;
    let s_grid = uniform_grid(s_max, grid);
    let traj = simulate(&inst, &init, s_max, &s_grid, &SimulationOptions::with_tol(tol))?;
    let path = out
        .clone()
        .unwrap_or_else(|| cli.out_dir.join(format!("trajectory.{}", extension(cli.format))));
    write_table(&trajectory_table(&traj)?, &traj.samples(), cli.format, &path)?;
    let stats = traj.stats();
    say!(
        "{} samples, {} steps ({} rejected) -> {}",
        traj.samples().len(),
        stats.accepted,
        stats.rejected,
        path.display()
    );
    Ok(())
}

fn cmd_limit_path(cli: &Cli, instance: &Path, k: &Option<Vec<f64>>, grid: usize, s_max_factor: f64) -> Result<()> {
    let inst = load_instance(instance)?;
    let k = vector_or_ones(k, inst.d(), "k")?;
    let path = compute_path(&inst, &k)?;
    let summary = LimitPathOutput {
        breakpoints: &path.breakpoints,
        active_sets: path.segments.iter().map(|s| &s.active).collect(),
        fixed_points: path.segments.iter().map(|s| s.fixed_point.theta.as_slice()).collect(),
        s_star: path.s_star,
        k: &path.k,
    };
    let json_path = cli.out_dir.join("limit_path.json");
    write_json(&json_path, &summary)?;
    let hi = s_max_factor * path.s_star;
    let s_grid: Vec<f64> = (1..=grid.max(1)).map(|i| hi * i as f64 / grid.max(1) as f64).collect();
    let csv_path = cli.out_dir.join("limit_path.csv");
    limit_path_table(&path, &s_grid)?.write(&csv_path)?;
    say!("s* = {}", path.s_star);
    for (seg, bp) in path.segments.iter().skip(1).zip(&path.breakpoints) {
        say!("s = {bp:.6}: active {}", seg.active);
    }
    say!("-> {}, {}", json_path.display(), csv_path.display());
    Ok(())
}

fn load_sweep(args: &SweepArgs) -> Result<(ExperimentConfig, ProblemInstance)> {
    let cfg = args.config()?;
    let loaded = cfg.instance.load()?;
    Ok((cfg, loaded.instance))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "not reached".to_string(), |x| format!("{x:.6}"))
}

fn cmd_compare(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let (cfg, inst) = load_sweep(args)?;
    let dir = output_dir(cli, Some(&cfg));
    let run = match compare_instance(&inst, &cfg) {
        Ok(run) => run,
        Err(ExperimentError::Partial { completed, source }) => {
            completed.write(&dir)?;
            eprintln!("partial report with {} rows written to {}", completed.rows.len(), dir.display());
            return Err(*source);
        }
        Err(e) => return Err(e),
    };
    let files = run.write(&dir)?;
    let rep = &run.report;
    say!("s* = {:.6}, breakpoints = {:?}", rep.s_star, rep.breakpoints);
    for r in &rep.rows {
        say!(
            "eps = {:e}: state {:.3e}, loss {:.3e}, average {:.3e}, hitting ratio {}",
            r.epsilon,
            r.state_sup_error,
            r.loss_sup_error,
            r.average_sup_error,
            fmt_opt(r.hitting_ratio)
        );
    }
    say!("{} files in {}", files.len(), dir.display());
    Ok(())
}

fn cmd_hitting(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let (cfg, inst) = load_sweep(args)?;
    let dir = output_dir(cli, Some(&cfg));
    let table = hitting_instance(&inst, &cfg)?;
    table.write(&dir)?;
    say!("s* = {:.6}, eta = {:.3e}", table.s_star, table.eta);
    for r in &table.rows {
        say!("eps = {:e}: ratio {}", r.epsilon, fmt_opt(r.ratio));
    }
    Ok(())
}

fn cmd_figure1(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let (cfg, inst) = load_sweep(args)?;
    let dir = output_dir(cli, Some(&cfg));
    let out = run_figure1(&inst, &cfg, &dir)?;
    say!(
        "field {}, fixed points {}, {} trajectories",
        out.vector_field.display(),
        out.fixed_points.display(),
        out.trajectories.len()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        &Command::Gen {
            generator,
            n,
            d,
            max_attempts,
            offdiag_scale,
            ref out,
        } => cmd_gen(cli, generator, n, d, max_attempts, offdiag_scale, out),
        Command::LcpSolve {
            instance,
            problem,
            q,
            s,
            k,
            method,
        } => cmd_lcp(cli, instance.as_deref(), problem.as_deref(), q, *s, k, *method),
        Command::FixedPoints { instance } => cmd_fixed_points(cli, instance),
        Command::Simulate {
            instance,
            epsilon,
            c,
            k,
            s_max,
            grid,
            tol,
            out,
        } => cmd_simulate(cli, instance, *epsilon, c, k, *s_max, *grid, *tol, out),
        Command::LimitPath {
            instance,
            k,
            grid,
            s_max_factor,
        } => cmd_limit_path(cli, instance, k, *grid, *s_max_factor),
        Command::Compare(args) => cmd_compare(cli, args),
        Command::HittingTime(args) => cmd_hitting(cli, args),
        Command::Figure1(args) => cmd_figure1(cli, args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
