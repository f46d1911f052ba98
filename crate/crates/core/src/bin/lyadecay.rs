#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use lyadecay::family::{grid_sup_envelope, uniform_envelope_exponential, uniform_envelope_quadratic, ParamFamily};
use lyadecay::field::ScalarFn;
use lyadecay::jordan::{JordanStructure, DEFAULT_REL_TOL};
use lyadecay::lyapunov::{decay_constant, suggest_weights, DecayEnvelope, LyapunovForm};
use lyadecay::models::cd::{theorem_bound_check, CoefficientField, CoefficientSpec, GaussianBump};
use lyadecay::models::fp::{fp_diffusion_check, fp_theorem_check, DiffusionField, DriftField, ShiftedGaussian};
use lyadecay::models::gt::{gt_theorem_check, GtBump, ParamBox, RelaxationField};
use lyadecay::models::TheoremRow;
use lyadecay::oracle::{check_dominance, linspace, DOMINANCE_SLACK};
use lyadecay::{CMatrix, Error};

const THREADS_ENV: &str = "LYADECAY_THREADS";

#[derive(Parser)]
#[command(name = "lyadecay", version, about = "Lyapunov forms and decay envelopes for defective linear ODEs")]
struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Jordan structure, Lyapunov weights and decay envelope of a matrix.
    Analyze {
        #[arg(long)]
        matrix: PathBuf,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checks the envelope against the exact propagator; exit 1 on violation.
    Verify {
        #[arg(long)]
        matrix: PathBuf,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        times: TimeArgs,
        /// Multiplies the envelope constant.
        #[arg(long, default_value_t = 1.0)]
        c_scale: f64,
        /// Added to the algebraic order M of the envelope.
        #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
        m_shift: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid suprema of the parameter family against its uniform envelope.
    Family {
        #[arg(long, value_enum, default_value_t = FamilyKind::Quadratic)]
        kind: FamilyKind,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        mu_min: f64,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convection-diffusion sensitivity experiment.
    ModelCd {
        /// `builtin` or a JSON file with coefficients `a`, `b` and optional bounds.
        #[arg(long)]
        coeffs: Option<String>,
        #[arg(long)]
        order: Option<u8>,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Goldstein-Taylor sensitivity experiment.
    ModelGt {
        /// `builtin` or a JSON file with a scalar function for `sigma`.
        #[arg(long)]
        sigma: Option<String>,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Fokker-Planck sensitivity experiment.
    ModelFp {
        /// `builtin` or a JSON file with a scalar function for `a` (or `d`).
        #[arg(long)]
        drift: Option<String>,
        #[arg(long, value_enum)]
        variant: Option<FpVariant>,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FamilyKind {
    Quadratic,
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FpVariant {
    Drift,
    Diffusion,
}

#[derive(clap::Args)]
struct WeightArgs {
    /// `default`, `heuristic`, or a JSON file with one weight list per block.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    rel_tol: Option<f64>,
}

#[derive(clap::Args)]
struct TimeArgs {
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    n_times: Option<usize>,
}

#[derive(clap::Args)]
struct GridArgs {
    /// `min:max:n`, evenly spaced.
    #[arg(long, allow_hyphen_values = true)]
    z_grid: Option<String>,
    #[command(flatten)]
    times: TimeArgs,
}

#[derive(clap::Args)]
struct ModelArgs {
    #[arg(long = "K")]
    k_max: Option<usize>,
    /// CSV of per-(z, t) rows; the JSON report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Values from `--config`; every field is optional.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    z_grid: Option<Vec<f64>>,
    t_max: Option<f64>,
    n_times: Option<usize>,
    #[serde(rename = "K")]
    k_max: Option<usize>,
    rel_tol: Option<f64>,
    weights: Option<Vec<Vec<f64>>>,
    order: Option<u8>,
    coefficients: Option<CoefficientSpec>,
    sigma: Option<ScalarFn>,
    drift: Option<ScalarFn>,
    diffusion: Option<ScalarFn>,
    variant: Option<FpVariant>,
}

enum Failure {
    Invalid(String),
    Violation(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn invalid<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Invalid(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(msg)) => {
            eprintln!("bound violated: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| Failure::Invalid(format!("{THREADS_ENV} must be a positive integer")))?;
        if n == 0 {
            return invalid(format!("{THREADS_ENV} must be a positive integer"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Invalid(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let cfg: RunConfig = match &cli.config {
        Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Failure::Invalid(format!("config: {e}")))?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Analyze { matrix, weights, out } => cmd_analyze(&cfg, &matrix, &weights, out.as_deref()),
        Command::Verify { matrix, weights, times, c_scale, m_shift, out } => {
            cmd_verify(&cfg, &matrix, &weights, &times, c_scale, m_shift, out.as_deref())
        }
        Command::Family { kind, alpha, beta, mu_min, grid, out } => {
            cmd_family(&cfg, kind, alpha, beta, mu_min, &grid, out.as_deref())
        }
        Command::ModelCd { coeffs, order, grid, model } => cmd_model_cd(&cfg, coeffs, order, &grid, &model),
        Command::ModelGt { sigma, grid, model } => cmd_model_gt(&cfg, sigma, &grid, &model),
        Command::ModelFp { drift, variant, grid, model } => cmd_model_fp(&cfg, drift, variant, &grid, &model),
    }
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read(path)?).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn check_grid(name: &str, g: &[f64]) -> CliResult<()> {
    if g.is_empty() || g.iter().any(|v| !v.is_finite()) || g.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid(format!("{name} grid must be nonempty, finite and strictly increasing"));
    }
    Ok(())
}

fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Failure::Invalid(format!("grid '{spec}' is not min:max:n"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || (n > 1 && !(hi > lo)) {
        return Err(bad());
    }
    Ok(if n == 1 { vec![lo] } else { linspace(lo, hi, n) })
}

fn resolve_z(cfg: &RunConfig, grid: &GridArgs, default: &str) -> CliResult<Vec<f64>> {
    let z = match (&grid.z_grid, &cfg.z_grid) {
        (Some(s), _) => parse_grid(s)?,
        (None, Some(g)) => g.clone(),
        (None, None) => parse_grid(default)?,
    };
    check_grid("z", &z)?;
    Ok(z)
}

fn resolve_t(cfg: &RunConfig, t: &TimeArgs, t_max: f64, n: usize) -> CliResult<Vec<f64>> {
    let t_max = t.t_max.or(cfg.t_max).unwrap_or(t_max);
    let n = t.n_times.or(cfg.n_times).unwrap_or(n);
    if !(t_max > 0.0 && t_max.is_finite()) || n < 2 {
        return invalid("need t_max > 0 and at least two times");
    }
    Ok(linspace(0.0, t_max, n))
}

fn resolve_rel_tol(cfg: &RunConfig, w: &WeightArgs) -> CliResult<f64> {
    let tol = w.rel_tol.or(cfg.rel_tol).unwrap_or(DEFAULT_REL_TOL);
    if !(tol > 0.0 && tol < 1.0) {
        return invalid(format!("rel_tol must lie in (0, 1), got {tol}"));
    }
    Ok(tol)
}

fn build_form(cfg: &RunConfig, w: &WeightArgs, c: &CMatrix) -> CliResult<(LyapunovForm, String)> {
    let structure = JordanStructure::compute(c, resolve_rel_tol(cfg, w)?)?;
    let explicit = match w.weights.as_deref() {
        None | Some("default") => cfg.weights.clone(),
        Some("heuristic") => Some(
            structure
                .blocks
                .iter()
                .enumerate()
                .map(|(n, b)| if b.length() > 1 && structure.at_gap(n) { suggest_weights(b) } else { vec![1.0] })
                .collect(),
        ),
        Some(path) => Some(parse_json(Path::new(path))?),
    };
    let label = w.weights.clone().unwrap_or_else(|| if cfg.weights.is_some() { "config" } else { "default" }.into());
    let form = match explicit {
        Some(ws) => LyapunovForm::with_weights(structure, &ws)?,
        None => LyapunovForm::new(structure)?,
    };
    Ok((form, label))
}

fn cmd_analyze(cfg: &RunConfig, matrix: &Path, w: &WeightArgs, out: Option<&Path>) -> CliResult<()> {
    let c: CMatrix = parse_json(matrix)?;
    let (form, label) = build_form(cfg, w, &c)?;
    let envelope = decay_constant(&form)?;
    let report = json!({
        "weights": label,
        "rel_tol": form.structure.rel_tol,
        "structure": form.structure,
        "form": form.blocks,
        "envelope": envelope,
    });
    emit(out, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))
}

fn csv_line(buf: &mut String, values: &[f64]) {
    let cells: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
    writeln!(buf, "{}", cells.join(",")).expect("string write");
}

fn cmd_verify(
    cfg: &RunConfig,
    matrix: &Path,
    w: &WeightArgs,
    times: &TimeArgs,
    c_scale: f64,
    m_shift: i64,
    out: Option<&Path>,
) -> CliResult<()> {
    if !(c_scale > 0.0) {
        return invalid("c_scale must be positive");
    }
    let c: CMatrix = parse_json(matrix)?;
    let (form, _) = build_form(cfg, w, &c)?;
    let env = decay_constant(&form)?;
    let m = env.m as i64 + m_shift;
    if m < 1 {
        return invalid(format!("shifted algebraic order {m} is below 1"));
    }
    let env = DecayEnvelope { c_const: env.c_const * c_scale, mu: env.mu, m: m as usize };
    let ts = resolve_t(cfg, times, 50.0, 201)?;
    let report = check_dominance(&c, &env, &ts)?;
    let mut buf = String::from("t,propagator_sq,bound,ratio\n");
    for i in 0..ts.len() {
        csv_line(&mut buf, &[report.times[i], report.propagator_sq[i], report.bound[i], report.ratio[i]]);
    }
    emit(out, &buf)?;
    if !report.dominated {
        return Err(Failure::Violation(format!(
            "max_ratio = {:.6e} (C = {}, mu = {}, M = {})",
            report.max_ratio, env.c_const, env.mu, env.m
        )));
    }
    Ok(())
}

fn cmd_family(
    cfg: &RunConfig,
    kind: FamilyKind,
    alpha: f64,
    beta: f64,
    mu_min: f64,
    grid: &GridArgs,
    out: Option<&Path>,
) -> CliResult<()> {
    let z = resolve_z(cfg, grid, "-4:4:81")?;
    let ts = resolve_t(cfg, &grid.times, 10.0, 51)?;
    let fam = match kind {
        FamilyKind::Quadratic => ParamFamily::quadratic(alpha, mu_min, z)?,
        FamilyKind::Exponential => ParamFamily::exponential(alpha, beta, mu_min, z)?,
    };
    let sup = grid_sup_envelope(&fam, &ts)?;
    let mut buf = String::from("t,grid_sup,envelope,ratio\n");
    let mut worst: f64 = 0.0;
    for (&t, &s) in ts.iter().zip(&sup) {
        let env = match kind {
            FamilyKind::Quadratic => uniform_envelope_quadratic(alpha, mu_min, t),
            FamilyKind::Exponential => uniform_envelope_exponential(alpha, beta, mu_min, t)?,
        };
        worst = worst.max(s / env);
        csv_line(&mut buf, &[t, s, env, s / env]);
    }
    emit(out, &buf)?;
    if worst > 1.0 + DOMINANCE_SLACK {
        return Err(Failure::Violation(format!("max_ratio = {worst:.6e}")));
    }
    Ok(())
}

fn rows_csv(rows: &[TheoremRow]) -> String {
    let mut buf = String::from("z,t,norm_sq,bound,ratio\n");
    for r in rows {
        csv_line(&mut buf, &[r.z, r.t, r.norm_sq, r.bound, r.ratio]);
    }
    buf
}

/// Prints the report without its rows, writes rows to `--out`, maps `holds` to the exit code.
fn finish_model(
    settings: Value,
    report: impl Serialize,
    rows: &[TheoremRow],
    holds: bool,
    max_ratio: f64,
    out: Option<&Path>,
) -> CliResult<()> {
    let mut report = serde_json::to_value(report).expect("report serializes");
    if let Value::Object(map) = &mut report {
        map.remove("rows");
    }
    let doc = json!({ "settings": settings, "report": report });
    println!("{}", serde_json::to_string_pretty(&doc).expect("report serializes"));
    if let Some(p) = out {
        emit(Some(p), &rows_csv(rows))?;
    }
    if !holds {
        return Err(Failure::Violation(format!("max_ratio = {max_ratio:.6e}")));
    }
    Ok(())
}

fn k_max(cfg: &RunConfig, m: &ModelArgs, default: usize) -> CliResult<usize> {
    let k = m.k_max.or(cfg.k_max).unwrap_or(default);
    if k == 0 {
        return invalid("K must be positive");
    }
    Ok(k)
}

fn warn_tail(tail: f64, initial: f64) {
    if tail > 1e-12 * initial.max(f64::MIN_POSITIVE) {
        eprintln!("warning: truncation tail {tail:.3e} is not negligible against the initial norm {initial:.3e}");
    }
}

fn builtin_or_file<T: for<'de> Deserialize<'de>>(
    arg: Option<String>,
    from_cfg: Option<T>,
    builtin: T,
) -> CliResult<(T, String)> {
    match arg.as_deref() {
        Some("builtin") => Ok((builtin, "builtin".into())),
        Some(path) => Ok((parse_json(Path::new(path))?, path.to_string())),
        None => match from_cfg {
            Some(v) => Ok((v, "config".into())),
            None => Ok((builtin, "builtin".into())),
        },
    }
}

fn cmd_model_cd(
    cfg: &RunConfig,
    coeffs: Option<String>,
    order: Option<u8>,
    grid: &GridArgs,
    m: &ModelArgs,
) -> CliResult<()> {
    let builtin = CoefficientSpec {
        a: ScalarFn::Poly { coeffs: vec![0.0, 1.0] },
        b: ScalarFn::Tanh { offset: 2.0, amp: 1.0, scale: 1.0 },
        b0: None,
        sup_da: None,
        sup_db: None,
        sup_d2a: None,
        sup_d2b: None,
    };
    let (spec, source) = builtin_or_file(coeffs, cfg.coefficients.clone(), builtin)?;
    let order = order.or(cfg.order).unwrap_or(1);
    let z = resolve_z(cfg, grid, "-3:3:13")?;
    let ts = resolve_t(cfg, &grid.times, 10.0, 50)?;
    let k = k_max(cfg, m, 32)?;
    let field = CoefficientField::from_spec(spec, &z)?;
    let bump = GaussianBump::default();
    let report = theorem_bound_check(&field, &bump, &z, &ts, order, k)?;
    warn_tail(report.tail_estimate, report.initial_sup);
    let settings = json!({
        "model": "cd", "coefficients": source, "field": field, "order": order, "K": k,
        "z_grid": z, "t_max": ts.last(), "n_times": ts.len(), "initial": bump,
    });
    finish_model(settings, &report, &report.rows, report.holds, report.max_ratio, m.out.as_deref())
}

fn cmd_model_gt(cfg: &RunConfig, sigma: Option<String>, grid: &GridArgs, m: &ModelArgs) -> CliResult<()> {
    let builtin = ScalarFn::Tanh { offset: 1.0, amp: 0.5, scale: 1.0 };
    let (sigma, source) = builtin_or_file(sigma, cfg.sigma.clone(), builtin)?;
    let z = resolve_z(cfg, grid, "-3:3:13")?;
    let ts = resolve_t(cfg, &grid.times, 10.0, 50)?;
    let k = k_max(cfg, m, 32)?;
    let field = RelaxationField::from_grid(sigma, &z)?;
    let bump = GtBump::default();
    let pbox = ParamBox::default();
    let report = gt_theorem_check(&field, &bump, &z, &ts, k, pbox)?;
    let settings = json!({
        "model": "gt", "sigma": source, "field": field, "K": k, "z_grid": z,
        "t_max": ts.last(), "n_times": ts.len(), "initial": bump, "param_box": pbox,
    });
    finish_model(settings, &report, &report.rows, report.holds, report.max_ratio, m.out.as_deref())
}

fn cmd_model_fp(
    cfg: &RunConfig,
    drift: Option<String>,
    variant: Option<FpVariant>,
    grid: &GridArgs,
    m: &ModelArgs,
) -> CliResult<()> {
    let variant = variant.or(cfg.variant).unwrap_or(FpVariant::Drift);
    let builtin = ScalarFn::Sin { offset: 1.0, amp: 0.3, freq: 1.0 };
    let from_cfg = match variant {
        FpVariant::Drift => cfg.drift.clone(),
        FpVariant::Diffusion => cfg.diffusion.clone(),
    };
    let (coef, source) = builtin_or_file(drift, from_cfg, builtin)?;
    let z = resolve_z(cfg, grid, "0:6.283185307179586:13")?;
    let ts = resolve_t(cfg, &grid.times, 15.0, 31)?;
    let k = k_max(cfg, m, 40)?;
    let init = ShiftedGaussian::default();
    match variant {
        FpVariant::Drift => {
            let field = DriftField::from_grid(coef, &z)?;
            let report = fp_theorem_check(&field, &init, &z, &ts, k)?;
            warn_tail(report.tail_estimate, report.initial_sup);
            let settings = json!({
                "model": "fp", "variant": variant, "drift": source, "field": field, "K": k,
                "z_grid": z, "t_max": ts.last(), "n_times": ts.len(), "initial": init,
            });
            finish_model(settings, &report, &report.rows, report.holds, report.max_ratio, m.out.as_deref())
        }
        FpVariant::Diffusion => {
            let field = DiffusionField::from_grid(coef, &z)?;
            let report = fp_diffusion_check(&field, &init.shift, &z, &ts, k)?;
            let settings = json!({
                "model": "fp", "variant": variant, "diffusion": source, "field": field, "K": k,
                "z_grid": z, "t_max": ts.last(), "n_times": ts.len(), "initial": init,
            });
            finish_model(settings, &report, &report.rows, report.holds, report.max_ratio, m.out.as_deref())
        }
    }
}
