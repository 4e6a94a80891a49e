use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dbanova::derivatives::{
    build_design, estimate_cross_partial, estimate_cross_partial_shrinking, estimate_from_runs, read_design_csv,
    read_outputs_csv, write_design_csv, DerivativeEstimate, VariableSubset,
};
use dbanova::distributions::{GeneratorKind, ProductDistribution, RandomStream};
use dbanova::emulator::{build, decode_state, encode_state, five_node_coefficients, DbAnovaEmulator, EmulatorConfig, MeanSource};
use dbanova::harness::{
    gap_curve, mse_curve, run_plan, sidecar_paths, write_aggregate, write_index_header, write_index_rows,
    BandwidthBasis, BudgetUnit, EstimatorSettings, ExperimentPlan, VarianceChoice, DEFAULT_BUDGETS,
    DEFAULT_REPLICATES,
};
use dbanova::perturb::{default_config, ScaleOptions, ScaleRule, DEFAULT_GAMMA};
use dbanova::schemes::{build_scheme, family_scheme, solve_coefficients, CoefficientSet, NodeSet, SchemeKind, SchemeParams};
use dbanova::sensitivity::EstimatorKind;
use dbanova::testbed::function_by_name;
use ndarray::Array2;
use serde_json::json;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "dbanova", version, about = "Randomized cross-partial derivatives, sensitivity indices and derivative-based ANOVA emulators")]
struct Cli {
    /// Base seed; every random draw derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run sequentially; output is byte-identical across runs and machines.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a stencil and print nodes, coefficients, residuals and Gamma.
    Coeffs(CoeffsArgs),
    /// Estimate one cross-partial derivative at a point.
    Derivative(DerivativeArgs),
    /// Main indices and total-index upper bounds at one budget.
    Indices(IndicesArgs),
    /// Build an emulator and predict at a set of points.
    Emulate(EmulateArgs),
    /// Replicated budget sweep with per-replicate and aggregate tables.
    Experiment(ExperimentArgs),
}

#[derive(Args, Debug, Clone)]
struct SchemeArgs {
    #[arg(long, default_value = "rate_optimal")]
    scheme: SchemeKind,
    #[arg(long)]
    rstar: Option<u32>,
    /// Number of nodes.
    #[arg(long = "L")]
    l: Option<usize>,
    #[arg(long)]
    lprime: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Exponent list for the custom scheme.
    #[arg(long, value_delimiter = ',')]
    exponents: Option<Vec<u32>>,
    /// Explicit nodes; defaults to the standard set with as many nodes as constraints.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    nodes: Option<Vec<f64>>,
}

impl SchemeArgs {
    fn solve(&self, order: u32) -> dbanova::Result<CoefficientSet> {
        let params = SchemeParams {
            rstar: self.rstar,
            l: self.l,
            l_prime: self.lprime,
            epsilon: self.epsilon,
            exponents: self.exponents.clone(),
        };
        let scheme = build_scheme(self.scheme, order, &params)?;
        let nodes = match &self.nodes {
            Some(v) => NodeSet::new(v.clone())?,
            None => NodeSet::default_nodes(scheme.len())?,
        };
        solve_coefficients(&nodes, &scheme)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Law {
    Uniform,
    Gaussian,
}

#[derive(Args, Debug, Clone)]
struct PerturbArgs {
    /// Law of the perturbation directions.
    #[arg(long)]
    law: Option<Law>,
    /// Bandwidth exponent in h = c_h n^(-gamma/2).
    #[arg(long)]
    gamma: Option<f64>,
    /// Bandwidth prefactor c_h.
    #[arg(long)]
    ch: Option<f64>,
    /// Half-width of the uniform law (overrides the default scale).
    #[arg(long)]
    xi: Option<f64>,
    /// Standard deviation of the Gaussian law (overrides the default scale).
    #[arg(long)]
    sigma: Option<f64>,
}

impl PerturbArgs {
    fn apply(&self, base: ScaleOptions) -> ScaleOptions {
        let mut o = base;
        if let Some(law) = self.law {
            o.rule = match law {
                Law::Uniform => ScaleRule::DimensionFreeUniform,
                Law::Gaussian => ScaleRule::GaussianSqrtD,
            };
        }
        if let Some(g) = self.gamma {
            o.gamma = g;
        }
        if let Some(c) = self.ch {
            o.c_h = c;
        }
        o.xi = self.xi.or(o.xi);
        o.sigma = self.sigma.or(o.sigma);
        o
    }
}

#[derive(Args, Debug)]
struct CoeffsArgs {
    /// Derivative order |u|.
    #[arg(long)]
    order: u32,
    #[command(flatten)]
    scheme: SchemeArgs,
}

#[derive(Args, Debug)]
struct DerivativeArgs {
    /// Registered function: ishigami, gfun_a, gfun_b, gfun_c or poly:<d>;<terms>.
    #[arg(long)]
    function: Option<String>,
    /// Evaluation point, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    point: Vec<f64>,
    /// One-based coordinates of the derivative, e.g. `1,3`.
    #[arg(long)]
    subset: String,
    #[command(flatten)]
    scheme: SchemeArgs,
    /// Perturbation sample size.
    #[arg(long = "N", default_value_t = 1000)]
    n: usize,
    #[command(flatten)]
    perturb: PerturbArgs,
    /// Halve the bandwidth until the design fits the function's domain.
    #[arg(long)]
    shrink_h: bool,
    /// Write the design for an external simulator and stop.
    #[arg(long)]
    export_design: Option<PathBuf>,
    /// Outputs (`row,output`) of an external simulator run on the exported design.
    #[arg(long)]
    outputs: Option<PathBuf>,
    /// Design file the outputs belong to; checked against the regenerated design.
    #[arg(long, requires = "outputs")]
    design: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct EstimatorArgs {
    #[arg(long)]
    function: String,
    #[arg(long, default_value = "plugin")]
    estimator: EstimatorKind,
    #[arg(long = "L", default_value_t = 1)]
    l: usize,
    /// Runs per gradient for plug-in estimators (default 2d).
    #[arg(long)]
    n0: Option<usize>,
    /// Whether budgets count model runs or sample points.
    #[arg(long, default_value = "runs")]
    budget_unit: BudgetUnit,
    /// Sample size fed to the bandwidth schedule.
    #[arg(long)]
    bandwidth_basis: Option<BandwidthBasis>,
    /// Source of the normalizing output variance.
    #[arg(long)]
    variance: Option<VarianceChoice>,
    #[arg(long)]
    generator: Option<GeneratorKind>,
    /// Preset for the single-budget tables (plug-in, L=1, Sobol, c_h=400).
    #[arg(long)]
    table_protocol: bool,
    #[command(flatten)]
    perturb: PerturbArgs,
}

impl EstimatorArgs {
    fn settings(&self) -> EstimatorSettings {
        let base = if self.table_protocol {
            EstimatorSettings::table_protocol()
        } else {
            EstimatorSettings::default()
        };
        EstimatorSettings {
            estimator: self.estimator,
            l: self.l,
            n0: self.n0,
            scale: self.perturb.apply(base.scale),
            basis: self.bandwidth_basis.unwrap_or(base.basis),
            unit: self.budget_unit,
            generator: self.generator.unwrap_or(base.generator),
            variance: self.variance.unwrap_or(base.variance),
        }
    }
}

#[derive(Args, Debug)]
struct IndicesArgs {
    #[command(flatten)]
    est: EstimatorArgs,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Per-replicate CSV; metadata goes to `<stem>.meta.json`. Stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[command(flatten)]
    est: EstimatorArgs,
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<usize>>,
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    replicates: usize,
    /// Per-replicate CSV; `<stem>.aggregate.csv` and `<stem>.meta.json` go next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EmulateArgs {
    #[arg(long, required_unless_present = "load_state")]
    function: Option<String>,
    /// Highest interaction order kept.
    #[arg(long, default_value_t = 1)]
    s: usize,
    /// Model runs for the build.
    #[arg(long, required_unless_present = "load_state")]
    budget: Option<usize>,
    /// Nodes of the stencil: 5 uses {0,1,-1,2,-2} with exponents 0..=4.
    #[arg(long = "L", default_value_t = 5)]
    l: usize,
    /// Perturbation draws per outer point.
    #[arg(long, default_value_t = 1)]
    n_inner: usize,
    /// Outer distribution override, e.g. `uniform(0,1),gaussian(0,1)`.
    #[arg(long)]
    dist: Option<String>,
    /// Estimate the mean from a dedicated sample of this many runs.
    #[arg(long)]
    mean_runs: Option<usize>,
    /// Raise the default cap of three on the interaction order.
    #[arg(long)]
    max_order: Option<usize>,
    #[arg(long)]
    generator: Option<GeneratorKind>,
    #[command(flatten)]
    perturb: PerturbArgs,
    /// Prediction points (CSV with a header row, one column per input);
    /// defaults to the emulator's outer points.
    #[arg(long)]
    eval_points: Option<PathBuf>,
    /// Prediction table; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    save_state: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["function", "budget"])]
    load_state: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<dbanova::Error>() {
            return err.exit_code() as u8;
        }
    }
    1
}

fn param(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(dbanova::Error::Parameter(msg.into()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            return Err(param("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.cmd {
        Command::Coeffs(a) => coeffs(a),
        Command::Derivative(a) => derivative(&cli, a),
        Command::Indices(a) => indices(&cli, a),
        Command::Emulate(a) => emulate(&cli, a),
        Command::Experiment(a) => experiment(&cli, a),
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn coeffs(a: &CoeffsArgs) -> anyhow::Result<()> {
    let c = a.scheme.solve(a.order)?;
    let params = SchemeParams {
        rstar: a.scheme.rstar,
        l: a.scheme.l,
        l_prime: a.scheme.lprime,
        epsilon: a.scheme.epsilon,
        exponents: a.scheme.exponents.clone(),
    };
    let scheme = build_scheme(a.scheme.scheme, a.order, &params)?;
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["item", "index", "value"])?;
    for (k, (b, coef)) in c.nodes.as_slice().iter().zip(&c.coefficients).enumerate() {
        w.write_record(["node", &(k + 1).to_string(), &format!("{b:?}")])?;
        w.write_record(["coefficient", &(k + 1).to_string(), &format!("{coef:?}")])?;
    }
    for &r in &scheme.exponents {
        w.write_record(["residual", &r.to_string(), &format!("{:?}", c.residual(r))])?;
    }
    let g = a.order + 1;
    w.write_record(["gamma", &g.to_string(), &format!("{:?}", c.gamma(g))])?;
    w.write_record(["condition", "", &format!("{:?}", c.condition)])?;
    w.flush()?;
    Ok(())
}

fn write_estimate(est: &DerivativeEstimate) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["subset", "value", "stderr", "N", "L", "scheme", "runs_used"])?;
    w.write_record([
        est.subset.to_string(),
        format!("{:?}", est.value),
        format!("{:?}", est.std_error),
        est.n.to_string(),
        est.l.to_string(),
        est.scheme.to_string(),
        est.runs_used.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

fn derivative(cli: &Cli, a: &DerivativeArgs) -> anyhow::Result<()> {
    let u: VariableSubset = a.subset.parse()?;
    let d = a.point.len();
    let tf = a.function.as_deref().map(function_by_name).transpose()?;
    if let Some(tf) = &tf {
        if tf.dim() != d {
            return Err(param(format!("function `{}` has {} inputs, point has {d}", tf.name, tf.dim())));
        }
    }
    let coeffs = a.scheme.solve(u.len() as u32)?;
    let scale = a.perturb.apply(ScaleOptions::default());
    let cfg = default_config(d, u.len() as u32, &coeffs, a.n, &scale)?;
    let stream = RandomStream::pseudo(cli.seed);

    if let Some(path) = &a.export_design {
        let design = build_design(&a.point, u, &coeffs, &cfg, a.n, &stream)?;
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_design_csv(&design, BufWriter::new(f))?;
        return Ok(());
    }
    if let Some(path) = &a.outputs {
        let design = build_design(&a.point, u, &coeffs, &cfg, a.n, &stream)?;
        if let Some(dp) = &a.design {
            let table = read_design_csv(File::open(dp).with_context(|| format!("opening {}", dp.display()))?)?;
            if table.points != design.points {
                return Err(param(format!(
                    "{} does not match the design regenerated from these settings and seed",
                    dp.display()
                )));
            }
        }
        let y = read_outputs_csv(File::open(path).with_context(|| format!("opening {}", path.display()))?)?;
        return write_estimate(&estimate_from_runs(&design, &y, u)?);
    }
    let tf = tf.ok_or_else(|| param("--function is required unless --export-design or --outputs is given"))?;
    let est = if a.shrink_h {
        estimate_cross_partial_shrinking(&tf.model, &a.point, u, &coeffs, &cfg, a.n, &stream)?
    } else {
        estimate_cross_partial(&tf.model, &a.point, u, &coeffs, &cfg, a.n, &stream)?
    };
    write_estimate(&est)
}

fn indices(cli: &Cli, a: &IndicesArgs) -> anyhow::Result<()> {
    let mut plan = ExperimentPlan::new(&a.est.function, a.est.settings());
    plan.budgets = vec![a.budget];
    plan.replicates = a.replicates;
    plan.seed = cli.seed;
    plan.out = a.out.clone();
    let result = run_plan(&plan)?;
    if a.out.is_none() {
        let mut w = csv::Writer::from_writer(io::stdout().lock());
        write_index_header(&mut w)?;
        write_index_rows(&mut w, &result.rows)?;
    }
    Ok(())
}

fn experiment(cli: &Cli, a: &ExperimentArgs) -> anyhow::Result<()> {
    let mut plan = ExperimentPlan::new(&a.est.function, a.est.settings());
    plan.budgets = a.budgets.clone().unwrap_or_else(|| DEFAULT_BUDGETS.to_vec());
    plan.replicates = a.replicates;
    plan.seed = cli.seed;
    plan.out = Some(a.out.clone());
    let result = run_plan(&plan)?;
    let mut agg = mse_curve(&result);
    agg.extend(gap_curve(&result));
    if !agg.is_empty() {
        let mut w = csv::Writer::from_writer(io::stdout().lock());
        write_aggregate(&mut w, &agg)?;
    }
    Ok(())
}

fn emulator_stencil(l: usize, s: u32) -> dbanova::Result<CoefficientSet> {
    if l == 5 {
        return five_node_coefficients(s);
    }
    let nodes = NodeSet::default_nodes(l)?;
    solve_coefficients(&nodes, &family_scheme(&nodes, s)?)
}

fn read_points(path: &Path, d: usize) -> anyhow::Result<Array2<f64>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let width = rdr.headers()?.len();
    if width != d {
        return Err(param(format!("{} has {width} columns, the emulator has {d} inputs", path.display())));
    }
    let mut flat = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for cell in rec.iter() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| anyhow::Error::new(dbanova::Error::Parse {
                    line: k + 2,
                    message: format!("`{cell}` is not a number"),
                }))?;
            flat.push(v);
        }
    }
    let n = flat.len() / d.max(1);
    Array2::from_shape_vec((n, d), flat).map_err(|e| anyhow!(e))
}

fn emulate(cli: &Cli, a: &EmulateArgs) -> anyhow::Result<()> {
    let (e, truth_fn, settings): (DbAnovaEmulator, _, serde_json::Value) = match &a.load_state {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let e = decode_state(&text)?;
            (e, None, json!({ "state": path }))
        }
        None => {
            let name = a.function.as_deref().expect("required by clap");
            let budget = a.budget.expect("required by clap");
            let tf = function_by_name(name)?;
            let outer = match &a.dist {
                Some(s) => ProductDistribution::parse_list(s)?,
                None => tf.dist.clone(),
            };
            if outer.dim() != tf.dim() {
                return Err(param("--dist must list one marginal per input"));
            }
            let coeffs = emulator_stencil(a.l, a.s as u32)?;
            let mean = match a.mean_runs {
                Some(n) => MeanSource::Dedicated(n),
                None => MeanSource::Auto,
            };
            let outer_n = match mean {
                MeanSource::Dedicated(n) => {
                    let per = coeffs.len() * a.n_inner;
                    budget.checked_sub(n).map(|b| b / per.max(1)).unwrap_or(0)
                }
                _ => EmulatorConfig::outer_for_budget(budget, &coeffs, a.n_inner)?,
            };
            let scale = a.perturb.apply(ScaleOptions {
                gamma: DEFAULT_GAMMA,
                ..ScaleOptions::default()
            });
            let cfg = default_config(tf.dim(), a.s as u32, &coeffs, a.n_inner.max(1), &scale)?;
            let generator = a.generator.unwrap_or(GeneratorKind::Pseudo);
            let mut ec = EmulatorConfig::new(
                a.s,
                outer_n,
                outer,
                coeffs,
                cfg,
                a.n_inner,
                RandomStream::new(cli.seed, generator),
            );
            ec.mean = mean;
            if let Some(m) = a.max_order {
                ec.max_order = m;
            }
            let e = build(&tf.model, &ec)?;
            let settings = json!({
                "function": name,
                "s": a.s,
                "budget": budget,
                "runs_used": e.runs_used,
                "outer_n": outer_n,
                "n_inner": a.n_inner,
                "stencil": e.descriptor,
                "bandwidth": ec.cfg.bandwidth,
                "law": ec.cfg.law.to_string(),
                "gamma": ec.cfg.gamma,
                "generator": generator.to_string(),
                "mean": format!("{:?}", ec.mean),
                "seed": cli.seed,
            });
            (e, Some(tf.model), settings)
        }
    };
    if let Some(path) = &a.save_state {
        std::fs::write(path, encode_state(&e)).with_context(|| format!("writing {}", path.display()))?;
    }
    let points = match &a.eval_points {
        Some(p) => read_points(p, e.dim())?,
        None => e.points.clone(),
    };
    let preds: Vec<(f64, f64)> = points
        .rows()
        .into_iter()
        .map(|r| e.predict_with_stderr(&r.to_vec()))
        .collect::<dbanova::Result<_>>()?;

    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    let mut header: Vec<String> = (1..=e.dim()).map(|j| format!("x_{j}")).collect();
    header.extend(["prediction".to_string(), "stderr".to_string()]);
    if truth_fn.is_some() {
        header.push("model".into());
    }
    w.write_record(&header)?;
    for (row, (p, se)) in points.rows().into_iter().zip(&preds) {
        let x = row.to_vec();
        let mut rec: Vec<String> = x.iter().map(|v| format!("{v:?}")).collect();
        rec.push(format!("{p:?}"));
        rec.push(format!("{se:?}"));
        if let Some(f) = &truth_fn {
            rec.push(format!("{:?}", f.eval(&x)));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    if let Some(out) = &a.out {
        let (_, meta) = sidecar_paths(out);
        let text = serde_json::to_string_pretty(&json!({
            "tool": "dbanova",
            "version": env!("CARGO_PKG_VERSION"),
            "command": "emulate",
            "settings": settings,
            "threads": rayon::current_num_threads(),
        }))?;
        std::fs::write(meta, text + "\n")?;
    }
    Ok(())
}
