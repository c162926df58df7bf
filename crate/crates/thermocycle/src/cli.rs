//! Experiment driver: JSON configs, the named runs, and their CSV/JSON outputs.
//!
//! Configs are single JSON documents whose numbers are all written as decimal strings.
//! Every run writes its tables into the output directory together with `manifest.json`,
//! and prints a short human summary to standard error.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::cocycle::{Matrix, OneStepCocycle};
use crate::ergodic::{
    ldp_tail_rates, lyapunov_exact, lyapunov_mc, variational_witness, LdpMeasure, LdpMode, MarkovChainSpec, McOptions,
};
use crate::error::{Error, Result};
use crate::potential::{additive_pressure, gibbs_markov_measure, rpf_solve, Potential};
use crate::pressure::{legendre_spectrum, pressure_curve, truncated_pressure, CONVEXITY_TOL};
use crate::report::{fmt17, Table};
use crate::sft::{Subshift, Word};
use crate::transfer::{derivative_consistency, eta_dimension_estimate, g_t_rowsum_check, gibbs_ratio_report, leading_eigen, mu_t_cylinders};
use crate::typicality::{certify, outcome_json, TypicalityOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "thermocycle", version, about = "Pressure, transfer operators and Gibbs diagnostics for matrix cocycles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory; defaults to the config's output_dir, then ./out.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Norm,
    VectorNorm,
    Gap,
    XiStarNorm,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Truncated pressure with brackets, and log rho_t + P_top(psi) on the same grid.
    PressureScan(CommonArgs),
    /// Word facts, brackets and Gibbs ratios for the diagonal/swap/rotation example.
    PhaseTransition(CommonArgs),
    /// Search for a pinching and twisting certificate.
    Typicality(CommonArgs),
    /// Exact deviation masses and fitted tail rate.
    Ldp {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Deviation size, as a decimal string.
        #[arg(long)]
        epsilon: Option<String>,
    },
    /// Gibbs ratios, mu_t defect, derivative identity and g_t row sums at selected t.
    GibbsCheck(CommonArgs),
    /// Exact and Monte Carlo Lyapunov exponents of the Gibbs measure of psi.
    Lyapunov(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::PressureScan(_) => "pressure-scan",
            Command::PhaseTransition(_) => "phase-transition",
            Command::Typicality(_) => "typicality",
            Command::Ldp { .. } => "ldp",
            Command::GibbsCheck(_) => "gibbs-check",
            Command::Lyapunov(_) => "lyapunov",
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::PressureScan(c)
            | Command::PhaseTransition(c)
            | Command::Typicality(c)
            | Command::GibbsCheck(c)
            | Command::Lyapunov(c) => c,
            Command::Ldp { common, .. } => common,
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoConvergence { .. } | Error::IllConditioned { .. } | Error::DegenerateGap { .. } => EXIT_NUMERICAL,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

#[derive(Clone, Debug, Default)]
pub struct LdpSettings {
    pub epsilon: Option<f64>,
    pub mode: Option<String>,
    pub n_min: usize,
    pub n_max: usize,
    pub window: usize,
    pub angles: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GibbsSettings {
    pub t_values: Vec<f64>,
    pub n_max: usize,
    pub samples: usize,
    pub window: usize,
    pub derivative_n: usize,
}

#[derive(Clone, Debug)]
pub struct LyapunovSettings {
    pub n_mc: usize,
    pub reps: usize,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub name: String,
    pub subshift: Subshift,
    pub cocycle: OneStepCocycle,
    pub psi: Potential,
    pub t_grid: Vec<f64>,
    pub n: usize,
    pub grid_m: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub theta: Option<f64>,
    pub ldp: LdpSettings,
    pub max_period: usize,
    pub max_connect: usize,
    pub gibbs: GibbsSettings,
    pub lyapunov: LyapunovSettings,
}

fn cfg_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

fn decimal(v: &Value, field: &str) -> Result<f64> {
    let s = v.as_str().ok_or_else(|| cfg_err(field, "expected a decimal string"))?;
    let x: f64 = s.trim().parse().map_err(|_| cfg_err(field, format!("`{s}` is not a decimal number")))?;
    if !x.is_finite() {
        return Err(cfg_err(field, "value must be finite"));
    }
    Ok(x)
}

fn count(v: &Value, field: &str) -> Result<usize> {
    let s = v.as_str().ok_or_else(|| cfg_err(field, "expected a decimal string"))?;
    s.trim().parse().map_err(|_| cfg_err(field, format!("`{s}` is not a nonnegative integer")))
}

fn decimals(v: &Value, field: &str) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| cfg_err(field, "expected an array"))?;
    arr.iter().enumerate().map(|(i, x)| decimal(x, &format!("{field}[{i}]"))).collect()
}

fn opt<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.get(key).filter(|v| !v.is_null())
}

fn req<'a>(obj: &'a Map<String, Value>, key: &str, field: &str) -> Result<&'a Value> {
    opt(obj, key).ok_or_else(|| cfg_err(field, "missing"))
}

fn section<'a>(root: &'a Map<String, Value>, key: &str) -> Result<Option<&'a Map<String, Value>>> {
    match opt(root, key) {
        None => Ok(None),
        Some(v) => v.as_object().map(Some).ok_or_else(|| cfg_err(key, "expected an object")),
    }
}

fn opt_count(obj: Option<&Map<String, Value>>, key: &str, field: &str, default: usize) -> Result<usize> {
    match obj.and_then(|o| opt(o, key)) {
        Some(v) => count(v, field),
        None => Ok(default),
    }
}

fn parse_matrix(v: &Value, field: &str) -> Result<Matrix> {
    if let Some(obj) = v.as_object() {
        if let Some(turns) = opt(obj, "rotation_turns") {
            return Ok(Matrix::rotation(2.0 * PI * decimal(turns, &format!("{field}.rotation_turns"))?));
        }
        if let Some(d) = opt(obj, "diag") {
            let values = decimals(d, &format!("{field}.diag"))?;
            if values.is_empty() {
                return Err(cfg_err(field, "diag must not be empty"));
            }
            return Ok(Matrix::diag(&values));
        }
        return Err(cfg_err(field, "expected an entry array, {\"rotation_turns\": ...} or {\"diag\": [...]}"));
    }
    let values = decimals(v, field)?;
    let d = (values.len() as f64).sqrt().round() as usize;
    if d == 0 || d * d != values.len() {
        return Err(cfg_err(field, format!("{} entries do not form a square matrix", values.len())));
    }
    Matrix::new(d, values).map_err(|e| cfg_err(field, e.to_string()))
}

/// The diagonal / swap / rotation generators of the three-symbol example.
pub fn phase_transition_cocycle(lambda: f64, theta: f64) -> Result<OneStepCocycle> {
    OneStepCocycle::new(vec![
        Matrix::diag(&[lambda, 1.0 / lambda]),
        Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])?,
        Matrix::rotation(2.0 * PI * theta),
    ])
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text).map_err(|e| {
            cfg_err("<document>", format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        let root = root.as_object().ok_or_else(|| cfg_err("<document>", "expected a JSON object"))?;

        let name = opt(root, "name").and_then(Value::as_str).unwrap_or("unnamed").to_string();
        let q = count(req(root, "alphabet_size", "alphabet_size")?, "alphabet_size")?;
        if q == 0 {
            return Err(cfg_err("alphabet_size", "must be at least 1"));
        }
        let subshift = match opt(root, "adjacency") {
            None => Subshift::full_shift(q),
            Some(v) => {
                let rows = v.as_array().ok_or_else(|| cfg_err("adjacency", "expected an array of rows"))?;
                if rows.len() != q {
                    return Err(cfg_err("adjacency", format!("{} rows for alphabet size {q}", rows.len())));
                }
                let mut bits = Vec::with_capacity(q);
                for (i, row) in rows.iter().enumerate() {
                    let field = format!("adjacency[{i}]");
                    let r = row.as_array().ok_or_else(|| cfg_err(&field, "expected an array"))?;
                    if r.len() != q {
                        return Err(cfg_err(&field, format!("{} entries for alphabet size {q}", r.len())));
                    }
                    let mut out = Vec::with_capacity(q);
                    for (j, x) in r.iter().enumerate() {
                        let f = format!("{field}[{j}]");
                        match count(x, &f)? {
                            b @ (0 | 1) => out.push(b as u8),
                            _ => return Err(cfg_err(&f, "entries must be 0 or 1")),
                        }
                    }
                    bits.push(out);
                }
                Subshift::new(q, &bits).map_err(|e| cfg_err("adjacency", e.to_string()))?
            }
        };

        let lambda = opt(root, "lambda").map(|v| decimal(v, "lambda")).transpose()?;
        let theta = opt(root, "theta").map(|v| decimal(v, "theta")).transpose()?;
        let mats_v = req(root, "matrices", "matrices")?
            .as_array()
            .ok_or_else(|| cfg_err("matrices", "expected an array"))?;
        if mats_v.len() != q {
            return Err(cfg_err("matrices", format!("{} matrices for alphabet size {q}", mats_v.len())));
        }
        let mats = mats_v
            .iter()
            .enumerate()
            .map(|(i, v)| parse_matrix(v, &format!("matrices[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let cocycle = OneStepCocycle::new(mats).map_err(|e| cfg_err("matrices", e.to_string()))?;

        let psi = match opt(root, "psi") {
            None => Potential::zero(q),
            Some(v) => {
                let values = decimals(v, "psi")?;
                if values.len() != q {
                    return Err(cfg_err("psi", format!("{} values for alphabet size {q}", values.len())));
                }
                Potential::per_symbol(values)
            }
        };

        let tg = req(root, "t_grid", "t_grid")?.as_object().ok_or_else(|| cfg_err("t_grid", "expected an object"))?;
        let start = decimal(req(tg, "start", "t_grid.start")?, "t_grid.start")?;
        let stop = decimal(req(tg, "stop", "t_grid.stop")?, "t_grid.stop")?;
        let k = count(req(tg, "count", "t_grid.count")?, "t_grid.count")?;
        if k == 0 {
            return Err(cfg_err("t_grid.count", "the t grid is empty"));
        }
        if k > 1 && !(stop > start) {
            return Err(cfg_err("t_grid.stop", "must exceed start when count > 1"));
        }
        let t_grid: Vec<f64> = if k == 1 {
            vec![start]
        } else {
            (0..k).map(|i| start + (stop - start) * i as f64 / (k - 1) as f64).collect()
        };

        let n = count(req(root, "n", "n")?, "n")?;
        if n == 0 {
            return Err(cfg_err("n", "must be at least 1"));
        }
        let grid_m = match opt(root, "M") {
            Some(v) => count(v, "M")?,
            None => crate::transfer::DEFAULT_M,
        };
        if grid_m < 64 {
            return Err(cfg_err("M", "must be at least 64"));
        }
        let seed = match opt(root, "seed") {
            Some(v) => count(v, "seed")? as u64,
            None => 0,
        };
        let output_dir = opt(root, "output_dir").and_then(Value::as_str).map(PathBuf::from);

        let ldp_sec = section(root, "ldp")?;
        let ldp = LdpSettings {
            epsilon: ldp_sec.and_then(|o| opt(o, "epsilon")).map(|v| decimal(v, "ldp.epsilon")).transpose()?,
            mode: ldp_sec.and_then(|o| opt(o, "mode")).and_then(Value::as_str).map(String::from),
            n_min: opt_count(ldp_sec, "n_min", "ldp.n_min", 4.min(n))?,
            n_max: opt_count(ldp_sec, "n_max", "ldp.n_max", n)?,
            window: opt_count(ldp_sec, "window", "ldp.window", 4)?,
            angles: match ldp_sec.and_then(|o| opt(o, "angles")) {
                Some(v) => decimals(v, "ldp.angles")?,
                None => vec![0.0],
            },
        };
        if ldp.n_min == 0 || ldp.n_min > ldp.n_max {
            return Err(cfg_err("ldp.n_min", "need 1 <= n_min <= n_max"));
        }

        let typ = section(root, "typicality")?;
        let max_period = opt_count(typ, "max_period", "typicality.max_period", crate::typicality::DEFAULT_MAX_PERIOD)?;
        let max_connect = opt_count(typ, "max_connect", "typicality.max_connect", crate::typicality::DEFAULT_MAX_CONNECT)?;

        let gs = section(root, "gibbs")?;
        let gibbs = GibbsSettings {
            t_values: match gs.and_then(|o| opt(o, "t_values")) {
                Some(v) => decimals(v, "gibbs.t_values")?,
                None => t_grid.clone(),
            },
            n_max: opt_count(gs, "n_max", "gibbs.n_max", n.min(10))?,
            samples: opt_count(gs, "samples", "gibbs.samples", 50)?,
            window: opt_count(gs, "window", "gibbs.window", 40)?,
            derivative_n: opt_count(gs, "derivative_n", "gibbs.derivative_n", n.min(8))?,
        };
        if gibbs.t_values.is_empty() {
            return Err(cfg_err("gibbs.t_values", "must not be empty"));
        }

        let ls = section(root, "lyapunov")?;
        let lyapunov = LyapunovSettings {
            n_mc: opt_count(ls, "n_mc", "lyapunov.n_mc", 200)?,
            reps: opt_count(ls, "reps", "lyapunov.reps", 400)?,
        };

        Ok(ExperimentConfig {
            name,
            subshift,
            cocycle,
            psi,
            t_grid,
            n,
            grid_m,
            seed,
            output_dir,
            lambda,
            theta,
            ldp,
            max_period,
            max_connect,
            gibbs,
            lyapunov,
        })
    }

    pub fn from_path(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| cfg_err("<document>", "config is not UTF-8"))?;
        Ok((Self::from_json_str(text)?, bytes))
    }
}

/// Files produced by a run plus the human summary lines.
#[derive(Debug, Default)]
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub summary: Vec<String>,
}

impl RunOutput {
    fn csv(&mut self, name: &str, table: &Table) {
        self.files.push((name.into(), table.to_csv().into_bytes()));
    }

    fn json(&mut self, name: &str, value: &Value) {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.files.push((name.into(), text.into_bytes()));
    }

    fn note(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }
}

fn opt17(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".into(), fmt17)
}

pub fn run_pressure_scan(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (s, c, psi) = (&cfg.subshift, &cfg.cocycle, &cfg.psi);
    let mut out = RunOutput::default();
    let curve = pressure_curve(s, c, psi, &cfg.t_grid, cfg.n)?;
    let p_top_psi = additive_pressure(s, psi.values())?;
    let mut cross = vec![f64::NAN; cfg.t_grid.len()];
    let mut gaps = vec![f64::NAN; cfg.t_grid.len()];
    let mut spectral = Vec::new();
    if c.dim() == 2 {
        let g = rpf_solve(s, psi)?;
        for (i, &t) in cfg.t_grid.iter().enumerate() {
            let sd = leading_eigen(s, c, &g, t, cfg.grid_m)?;
            cross[i] = sd.log_rho() + p_top_psi;
            gaps[i] = sd.gap_est;
            spectral.push(sd.summary_json());
        }
    } else {
        out.note(format!("dimension {} has no projective grid; spectral columns are nan", c.dim()));
    }
    let values = curve.values();
    let convexity = curve.convexity(CONVEXITY_TOL).ok();
    let mut second = vec![f64::NAN; cfg.t_grid.len()];
    let mut kink = vec![0.0; cfg.t_grid.len()];
    if let Some(cr) = &convexity {
        for (i, t) in cfg.t_grid.iter().enumerate() {
            if let Some(&(_, d2)) = cr.second_differences.iter().find(|(tt, _)| tt == t) {
                second[i] = d2;
            }
            if cr.kink.is_some_and(|(tk, _)| tk == *t) {
                kink[i] = 1.0;
            }
        }
    }
    out.csv(
        "pressure_curve.csv",
        &curve.to_table(&[
            ("log_rho_plus_ptop", cross.clone()),
            ("gap_est", gaps),
            ("second_difference", second),
            ("kink", kink),
        ]),
    );
    out.json("spectral.json", &Value::Array(spectral));

    let legendre = legendre_spectrum(&cfg.t_grid, &values, &[0.0], CONVEXITY_TOL);
    let max_cross = curve
        .estimates
        .iter()
        .zip(&cross)
        .filter(|(_, x)| x.is_finite())
        .map(|(e, x)| (e.p_n - x).abs())
        .fold(f64::NAN, f64::max);
    out.json(
        "pressure_summary.json",
        &json!({
            "name": cfg.name,
            "n": cfg.n,
            "M": cfg.grid_m,
            "p_top_psi": p_top_psi,
            "max_abs_p_n_minus_log_rho_plus_ptop": max_cross,
            "convexity": convexity,
            "legendre_h0": legendre.as_ref().ok().map(|l| l.plateau_at_zero),
            "legendre_error": legendre.as_ref().err().map(|e| e.to_string()),
        }),
    );
    out.note(format!("pressure-scan {}: {} t values, n = {}, M = {}", cfg.name, cfg.t_grid.len(), cfg.n, cfg.grid_m));
    out.note(format!("P_top(psi) = {p_top_psi:.10}; max |p_n - (log rho + P_top(psi))| = {max_cross:.3e}"));
    if let Some(cr) = &convexity {
        out.note(format!("curve shape: {:?}", cr.shape));
    }
    Ok(out)
}

pub fn run_phase_transition(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let lambda = cfg.lambda.ok_or_else(|| cfg_err("lambda", "missing (required by phase-transition)"))?;
    let theta = cfg.theta.ok_or_else(|| cfg_err("theta", "missing (required by phase-transition)"))?;
    if !(lambda > 1.0) {
        return Err(cfg_err("lambda", "must exceed 1"));
    }
    let s = Subshift::full_shift(3);
    let c = phase_transition_cocycle(lambda, theta)?;
    let psi = Potential::zero(3);
    let g = rpf_solve(&s, &psi)?;
    let mut out = RunOutput::default();
    let threshold = -(4.5f64).ln() / lambda.ln();

    // Word facts up to n = 50.
    let mut max_diag_dev: f64 = 0.0;
    let mut max_swap_dev: f64 = 0.0;
    let mut swap_exact = true;
    for n in 1..=50 {
        let ones = Word::new(vec![0; n]);
        max_diag_dev = max_diag_dev.max((c.product(&ones).log_norm() - n as f64 * lambda.ln()).abs());
        let j = ones.concat(&Word::new(vec![1])).concat(&ones);
        let m = c.product(&j).to_matrix();
        swap_exact &= m.data() == [0.0, 1.0, 1.0, 0.0];
        max_swap_dev = max_swap_dev.max((m.norm() - 1.0).abs());
    }

    let witness_chain = MarkovChainSpec::bernoulli(&s, &[0.0, 0.5, 0.5])?;
    let mut brackets = Table::new(&["t", "n", "p_n", "lower", "upper", "bound_lower", "bound_upper"]);
    let mut bracket_ok = true;
    for &t in cfg.t_grid.iter().filter(|&&t| t < 0.0) {
        let mut est = truncated_pressure(&s, &c, &psi, t, cfg.n)?;
        let w = variational_witness(&s, &c, &psi, t, &witness_chain, McOptions { seed: cfg.seed, ..McOptions::default() })?;
        est.raise_lower(w.value);
        bracket_ok &= est.lower >= 2f64.ln() - 1e-9 && est.upper <= 3f64.ln() + 1e-9;
        brackets.push(vec![
            fmt17(t),
            cfg.n.to_string(),
            fmt17(est.p_n),
            fmt17(est.lower),
            fmt17(est.upper),
            fmt17(2f64.ln()),
            fmt17(3f64.ln()),
        ]);
    }
    out.csv("phase_brackets.csv", &brackets);

    let mut gibbs = Table::new(&["t", "n", "min_ratio", "max_ratio", "growth_factor", "spread_growth"]);
    let mut per_t = Vec::new();
    for &t in &cfg.gibbs.t_values {
        let sd = leading_eigen(&s, &c, &g, t, cfg.grid_m)?;
        let rep = gibbs_ratio_report(&sd, &s, &c, &g, cfg.gibbs.n_max)?;
        let tail: Vec<f64> = rep.rows.iter().filter(|r| r.n >= 6).filter_map(|r| r.growth_factor).collect();
        let min_growth = tail.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_growth = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for r in &rep.rows {
            gibbs.push(vec![
                fmt17(t),
                r.n.to_string(),
                fmt17(r.min_ratio),
                fmt17(r.max_ratio),
                opt17(r.growth_factor),
                opt17(r.spread_growth),
            ]);
        }
        per_t.push(json!({
            "t": t,
            "log_rho_plus_log3": sd.log_rho() + 3f64.ln(),
            "gap_est": sd.gap_est,
            "below_threshold": t < threshold,
            "min_growth_n_ge_6": min_growth,
            "max_growth_n_ge_6": max_growth,
            "blow_up": min_growth >= 1.5,
            "mu_t_defect": rep.max_defect,
        }));
        out.note(format!("t = {t:+.4}: growth factors for n >= 6 in [{min_growth:.4}, {max_growth:.4}]"));
    }
    out.csv("gibbs_report.csv", &gibbs);
    out.json(
        "phase_transition.json",
        &json!({
            "lambda": lambda,
            "theta": theta,
            "threshold": threshold,
            "diag_word_max_log_norm_deviation": max_diag_dev,
            "swap_word_exact": swap_exact,
            "swap_word_max_norm_deviation": max_swap_dev,
            "brackets_within_log2_log3": bracket_ok,
            "per_t": per_t,
        }),
    );
    out.note(format!("threshold -log(9/2)/log(lambda) = {threshold:.6}"));
    out.note(format!("swap word exact for n <= 50: {swap_exact}; brackets within [log 2, log 3]: {bracket_ok}"));
    Ok(out)
}

pub fn run_typicality(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (outcome, bounds) = certify(&cfg.subshift, &cfg.cocycle, cfg.max_period, cfg.max_connect)?;
    let mut out = RunOutput::default();
    out.json("typicality.json", &outcome_json(&outcome, &bounds));
    match &outcome {
        TypicalityOutcome::Certified(c) => out.note(format!(
            "certified: p = {}, z = {}, modulus margin {:.3e}, min independence sv {:.3e}",
            c.p, c.z, c.modulus_margin, c.min_independence_sv
        )),
        TypicalityOutcome::Inconclusive(r) => out.note(format!("inconclusive: {}", r.reason)),
    }
    Ok(out)
}

fn parse_mode(name: &str, settings: &LdpSettings) -> Result<LdpMode> {
    Ok(match name {
        "norm" => LdpMode::Norm,
        "vector-norm" => LdpMode::VectorNorm { angles: settings.angles.clone() },
        "gap" => LdpMode::Gap,
        "xi-star-norm" => LdpMode::XiStarNorm { window: settings.window },
        other => return Err(cfg_err("ldp.mode", format!("unknown mode `{other}`"))),
    })
}

pub fn run_ldp(cfg: &ExperimentConfig, mode: Option<ModeArg>, epsilon: Option<f64>) -> Result<RunOutput> {
    let epsilon = epsilon.or(cfg.ldp.epsilon).ok_or_else(|| cfg_err("epsilon", "missing"))?;
    if !(epsilon > 0.0) {
        return Err(cfg_err("epsilon", "must be positive"));
    }
    let mode_name = match mode {
        Some(ModeArg::Norm) => "norm".to_string(),
        Some(ModeArg::VectorNorm) => "vector-norm".to_string(),
        Some(ModeArg::Gap) => "gap".to_string(),
        Some(ModeArg::XiStarNorm) => "xi-star-norm".to_string(),
        None => cfg.ldp.mode.clone().unwrap_or_else(|| "norm".into()),
    };
    let mode = parse_mode(&mode_name, &cfg.ldp)?;
    let g = rpf_solve(&cfg.subshift, &cfg.psi)?;
    let n_range: Vec<usize> = (cfg.ldp.n_min..=cfg.ldp.n_max).collect();
    let rep = ldp_tail_rates(&cfg.subshift, &cfg.cocycle, &g, epsilon, &n_range, &mode, LdpMeasure::Gibbs, None)?;
    let mut out = RunOutput::default();
    out.csv("ldp_rates.csv", &rep.to_table());
    out.json("ldp_summary.json", &serde_json::to_value(&rep).expect("serializable"));
    let zero = rep.rows.iter().filter(|r| r.zero_mass).count();
    out.note(format!(
        "ldp {mode_name}, epsilon = {epsilon}: reference {:.6}, slope {}, {zero} of {} rows with zero mass",
        rep.reference,
        rep.slope.map_or_else(|| "undefined".into(), |b| format!("{b:.5}")),
        rep.rows.len()
    ));
    Ok(out)
}

pub fn run_gibbs_check(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (s, c) = (&cfg.subshift, &cfg.cocycle);
    let g = rpf_solve(s, &cfg.psi)?;
    let mut gibbs = Table::new(&["t", "n", "min_ratio", "max_ratio", "growth_factor", "spread_growth"]);
    let mut per_t = Vec::new();
    let mut out = RunOutput::default();
    for &t in &cfg.gibbs.t_values {
        let sd = leading_eigen(s, c, &g, t, cfg.grid_m)?;
        let rep = gibbs_ratio_report(&sd, s, c, &g, cfg.gibbs.n_max)?;
        for r in &rep.rows {
            gibbs.push(vec![
                fmt17(t),
                r.n.to_string(),
                fmt17(r.min_ratio),
                fmt17(r.max_ratio),
                opt17(r.growth_factor),
                opt17(r.spread_growth),
            ]);
        }
        let mu = mu_t_cylinders(&sd, s, c, &g, cfg.gibbs.n_max)?;
        if let Some(w) = &mu.warning {
            out.note(format!("t = {t}: {w}"));
        }
        let deriv = derivative_consistency(&sd, s, c, &g, cfg.gibbs.derivative_n)?;
        let rowsum = match g_t_rowsum_check(&sd, s, c, &g, cfg.gibbs.window, cfg.gibbs.samples, cfg.seed) {
            Ok(r) => json!({ "max_deviation": r.max_deviation, "worst_err_bound": r.worst_err_bound, "samples": r.samples, "window": r.window }),
            Err(e @ Error::DegenerateGap { .. }) => json!({ "error": e.to_string() }),
            Err(e) => return Err(e),
        };
        out.note(format!(
            "t = {t:+.4}: rho = {:.10}, residual {:.2e}, mu_t defect {:.2e}, derivative gap {:.2e}",
            sd.rho, sd.residual, mu.defect, deriv.rel_gap
        ));
        per_t.push(json!({
            "spectral": sd.summary_json(),
            "residual": sd.residual,
            "adjoint_residual": sd.adjoint_residual,
            "mu_t_defect": mu.defect,
            "derivative": deriv,
            "g_t_rowsum": rowsum,
        }));
    }
    out.csv("gibbs_report.csv", &gibbs);
    out.csv("dimension_moments.csv", &dimension_table(cfg, &g)?);
    out.json("gibbs_check.json", &json!({ "name": cfg.name, "M": cfg.grid_m, "per_t": per_t }));
    Ok(out)
}

/// Floored sup-moments of eta_t at grid sizes M/4, M/2 and M for each t in the gibbs section.
fn dimension_table(cfg: &ExperimentConfig, g: &crate::potential::GFunction) -> Result<Table> {
    let (s, c) = (&cfg.subshift, &cfg.cocycle);
    let sizes = [cfg.grid_m / 4, cfg.grid_m / 2, cfg.grid_m];
    let s_grid: Vec<f64> = (1..=20).map(|i| 0.05 * i as f64).collect();
    let v_grid: Vec<f64> = (0..256).map(|k| k as f64 * PI / 256.0).collect();
    let mut table = Table::new(&["t", "s", "M", "sup_moment", "threshold", "estimate"]);
    for &t in &cfg.gibbs.t_values {
        let levels = sizes
            .iter()
            .map(|&m| leading_eigen(s, c, g, t, m).map(|sd| sd.eta()))
            .collect::<Result<Vec<_>>>()?;
        let rep = eta_dimension_estimate(&levels, &s_grid, &v_grid)?;
        for (i, &sv) in rep.s_grid.iter().enumerate() {
            for (l, &m) in rep.levels.iter().enumerate() {
                table.push(vec![
                    fmt17(t),
                    fmt17(sv),
                    m.to_string(),
                    fmt17(rep.sup_moments[i][l]),
                    fmt17(rep.thresholds[i]),
                    fmt17(rep.estimate),
                ]);
            }
        }
    }
    Ok(table)
}

pub fn run_lyapunov(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (s, c) = (&cfg.subshift, &cfg.cocycle);
    let g = rpf_solve(s, &cfg.psi)?;
    let full = lyapunov_exact(s, c, &gibbs_markov_measure(s, &g, cfg.n))?;
    let half = lyapunov_exact(s, c, &gibbs_markov_measure(s, &g, (cfg.n / 2).max(1)))?;
    let chain = MarkovChainSpec::from_gfunction(s, &g)?;
    let mc = lyapunov_mc(c, &chain, cfg.lyapunov.n_mc, cfg.lyapunov.reps, cfg.seed)?;
    let richardson = 2.0 * full.lambda1 - half.lambda1;
    let mut out = RunOutput::default();
    out.json(
        "lyapunov.json",
        &json!({
            "exact": full,
            "exact_half_depth": half,
            "richardson_lambda1": richardson,
            "monte_carlo": mc,
            "seed": cfg.seed,
        }),
    );
    out.note(format!(
        "lambda1: exact(n = {}) {:.6}, Richardson {:.6}, Monte Carlo(n = {}) {:.6} +- {:.6}",
        cfg.n,
        full.lambda1,
        richardson,
        cfg.lyapunov.n_mc,
        mc.lambda1,
        mc.stderr.unwrap_or(0.0)
    ));
    Ok(out)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses the config, runs the subcommand and writes outputs plus `manifest.json`.
/// Returns the directory written to.
pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let common = cli.command.common();
    let (mut cfg, raw) = ExperimentConfig::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out_dir = common.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let run = match &cli.command {
        Command::PressureScan(_) => run_pressure_scan(&cfg)?,
        Command::PhaseTransition(_) => run_phase_transition(&cfg)?,
        Command::Typicality(_) => run_typicality(&cfg)?,
        Command::Ldp { mode, epsilon, .. } => {
            let eps = epsilon.as_deref().map(|e| decimal(&Value::String(e.into()), "epsilon")).transpose()?;
            run_ldp(&cfg, *mode, eps)?
        }
        Command::GibbsCheck(_) => run_gibbs_check(&cfg)?,
        Command::Lyapunov(_) => run_lyapunov(&cfg)?,
    };
    fs::create_dir_all(&out_dir).map_err(|e| Error::Io(format!("{}: {e}", out_dir.display())))?;
    let mut outputs = Map::new();
    for (name, bytes) in &run.files {
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        outputs.insert(name.clone(), Value::String(hex(&Sha256::digest(bytes))));
    }
    let version = env!("CARGO_PKG_VERSION");
    let modules: Map<String, Value> = ["sft", "cocycle", "projective", "potential", "pressure", "transfer", "ergodic", "typicality", "cli"]
        .iter()
        .map(|m| (m.to_string(), Value::String(version.into())))
        .collect();
    let manifest = json!({
        "subcommand": cli.command.name(),
        "config_path": common.config.display().to_string(),
        "config_sha256": hex(&Sha256::digest(&raw)),
        "experiment": cfg.name,
        "seed": cfg.seed,
        "threads": common.threads,
        "version": version,
        "modules": modules,
        "outputs_sha256": outputs,
    });
    let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
    text.push('\n');
    let path = out_dir.join("manifest.json");
    fs::write(&path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    for line in &run.summary {
        eprintln!("{line}");
    }
    Ok(out_dir)
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.command.common().threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_VALIDATION;
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match execute(&cli) {
        Ok(dir) => {
            eprintln!("wrote {}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "alphabet_size": "2",
        "matrices": [{"diag": ["2", "0.5"]}, {"rotation_turns": "0.25"}],
        "t_grid": {"start": "-0.1", "stop": "0.1", "count": "3"},
        "n": "6"
    }"#;

    #[test]
    fn minimal_config_parses() {
        let cfg = ExperimentConfig::from_json_str(MINIMAL).unwrap();
        assert_eq!(cfg.t_grid.len(), 3);
        assert!((cfg.t_grid[1]).abs() < 1e-15);
        assert!(cfg.subshift.is_full_shift());
        let r = cfg.cocycle.generator(1);
        assert!((r.get(1, 0) - 1.0).abs() < 1e-15);
    }

    fn field_of(text: &str) -> String {
        match ExperimentConfig::from_json_str(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn validation_names_the_field() {
        assert_eq!(field_of(&MINIMAL.replace(r#""count": "3""#, r#""count": "0""#)), "t_grid.count");
        assert_eq!(field_of(&MINIMAL.replace(r#"["2", "0.5"]"#, r#"["2", "x"]"#)), "matrices[0].diag[1]");
        assert_eq!(field_of(&MINIMAL.replace(r#""n": "6""#, r#""n": 6"#)), "n");
        assert_eq!(field_of("{ not json"), "<document>");
        let bad_rows = MINIMAL.replace(r#"{"diag": ["2", "0.5"]}"#, r#"["1", "2", "3"]"#);
        assert_eq!(field_of(&bad_rows), "matrices[0]");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&cfg_err("n", "x")), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::NoConvergence { iterations: 1, last_increment: 1.0 }), EXIT_NUMERICAL);
    }
}
