//! Library side of the `robustfit` command-line tool.
//!
//! Each subcommand is a pure function from parsed arguments (and input bytes)
//! to an [`Output`], which keeps the binary thin and lets tests exercise the
//! exact bytes that would be printed.

use std::io::Read;

use nalgebra::DVector;
use robustfit::asymptotics::{
    fisher_information, kl_report, l2_report, normal_kl_variances, normal_l2_variances,
    normal_ml_variances, KlInfluence, L2Influence,
};
use robustfit::simharness::{
    run_scenario_with, Contaminant, Contamination, Estimator, ScenarioSpec, TrueModel,
};
use robustfit::{
    fit_min_l2, fit_ml_mvn, fit_ml_normal, fit_mvn_robust, fit_robust_kl, KernelSpec,
    LocalFitSpec, MvnLocalFitSpec, NormalModel, NormalParams, QuadratureSpec, SolverConfig,
    WeightFunction,
};
use serde_json::{json, Value};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("self-check failed: {0}")]
    SelfCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::SelfCheck(_) => 3,
        }
    }
}

impl From<robustfit::Error> for CliError {
    fn from(e: robustfit::Error) -> Self {
        use robustfit::Error as E;
        match e {
            E::InvalidInput(_) | E::DimensionMismatch { .. } | E::DegenerateData(_) | E::InvalidSpec(_) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Text for standard output plus the process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Output {
    pub text: String,
    pub exit_code: i32,
}

impl Output {
    fn ok(text: String) -> Self {
        Self { text, exit_code: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Printing options shared by every subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Printer {
    pub format: Format,
    /// Significant digits.
    pub precision: usize,
}

impl Default for Printer {
    fn default() -> Self {
        Self {
            format: Format::Json,
            precision: 6,
        }
    }
}

impl Printer {
    pub fn round(&self, v: f64) -> f64 {
        if !v.is_finite() || v == 0.0 {
            return v;
        }
        let p = self.precision.clamp(1, 17);
        format!("{:.*e}", p - 1, v).parse().unwrap_or(v)
    }

    pub fn number(&self, v: f64) -> String {
        if v.is_nan() {
            return "NaN".into();
        }
        if v.is_infinite() {
            return if v > 0.0 { "inf".into() } else { "-inf".into() };
        }
        serde_json::to_string(&self.round(v)).expect("finite float serializes")
    }

    fn round_value(&self, v: Value) -> Value {
        match v {
            Value::Number(n) if n.is_f64() => {
                let r = self.round(n.as_f64().expect("f64 number"));
                serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number)
            }
            Value::Array(a) => Value::Array(a.into_iter().map(|x| self.round_value(x)).collect()),
            Value::Object(o) => Value::Object(o.into_iter().map(|(k, x)| (k, self.round_value(x))).collect()),
            other => other,
        }
    }

    /// Pretty JSON with rounded floats and a trailing newline.
    pub fn json(&self, v: Value) -> String {
        let mut s = serde_json::to_string_pretty(&self.round_value(v)).expect("JSON value serializes");
        s.push('\n');
        s
    }

    fn csv(&self, header: &[&str], rows: &[Vec<String>]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        for r in rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 output")
    }

    fn opt(&self, v: Option<f64>) -> String {
        v.map_or_else(String::new, |x| self.number(x))
    }
}

fn float_or_null(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

// ---------------------------------------------------------------- CSV input

/// Reads all of `reader` into a string.
pub fn read_input<R: Read>(mut reader: R) -> CliResult<String> {
    let mut s = String::new();
    reader
        .read_to_string(&mut s)
        .map_err(|e| CliError::Input(format!("cannot read input: {e}")))?;
    Ok(s)
}

/// Parses comma-separated numeric rows. A first line with any non-numeric
/// field is treated as a header. Every row must have `columns` fields when
/// given, otherwise as many as the first data row.
pub fn parse_csv(text: &str, columns: Option<usize>) -> CliResult<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = columns;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Input(format!("malformed CSV: {e}")))?;
        let line = rec.position().map_or(idx as u64 + 1, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if idx == 0 => continue,
            Err(_) => {
                let bad = rec.iter().find(|f| f.parse::<f64>().is_err()).unwrap_or_default();
                return Err(CliError::Input(format!("line {line}: cannot parse '{bad}' as a number")));
            }
        };
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(CliError::Input(format!("line {line}: non-finite value {bad}")));
        }
        let w = *width.get_or_insert(values.len());
        if values.len() != w {
            return Err(CliError::Input(format!(
                "line {line}: expected {w} column(s), found {}",
                values.len()
            )));
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(CliError::Input(
            "input has no data rows; expected comma-separated numeric values, one observation per line".into(),
        ));
    }
    Ok(rows)
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    Normal,
    Mvn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FitMethod {
    Ml,
    L2,
    Kl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum WeightKind {
    #[default]
    Constant,
    ExpDelta,
    Kernel,
}

/// L2 weight and local likelihood tuning flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuning {
    pub weight: WeightKind,
    pub delta: Option<f64>,
    pub x0: Option<f64>,
    pub h: Option<f64>,
    pub k: f64,
}

impl Default for Tuning {
    fn default() -> Self {
        Self {
            weight: WeightKind::Constant,
            delta: None,
            x0: None,
            h: None,
            k: 2.0,
        }
    }
}

impl Tuning {
    /// L2 weight; `exp-delta` is centred at `center` with scale `scale`.
    fn l2_weight(&self, center: f64, scale: f64) -> CliResult<WeightFunction> {
        Ok(match self.weight {
            WeightKind::Constant => WeightFunction::Constant,
            WeightKind::ExpDelta => {
                let delta = self
                    .delta
                    .ok_or_else(|| CliError::Input("--weight exp-delta requires --delta".into()))?;
                WeightFunction::exp_delta(delta, center, scale)?
            }
            WeightKind::Kernel => {
                let (x0, h) = self
                    .x0
                    .zip(self.h)
                    .ok_or_else(|| CliError::Input("--weight kernel requires --x0 and --h".into()))?;
                WeightFunction::kernel_local(x0, KernelSpec::normal(h)?)?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitArgs {
    pub model: ModelKind,
    pub method: FitMethod,
    pub tuning: Tuning,
}

pub fn cmd_fit(args: &FitArgs, input: &str, out: &Printer) -> CliResult<Output> {
    match args.model {
        ModelKind::Normal => fit_normal(args, input, out),
        ModelKind::Mvn => fit_mvn(args, input, out),
    }
}

fn fit_normal(args: &FitArgs, input: &str, out: &Printer) -> CliResult<Output> {
    let data: Vec<f64> = parse_csv(input, Some(1))?.into_iter().map(|r| r[0]).collect();
    let cfg = SolverConfig::default();
    let quad = QuadratureSpec::default();
    let fit = match args.method {
        FitMethod::Ml => fit_ml_normal(&data)?,
        FitMethod::L2 => {
            let w = match args.tuning.weight {
                WeightKind::ExpDelta => WeightFunction::exp_delta_from_data(
                    args.tuning
                        .delta
                        .ok_or_else(|| CliError::Input("--weight exp-delta requires --delta".into()))?,
                    &data,
                )?,
                _ => args.tuning.l2_weight(0.0, 1.0)?,
            };
            fit_min_l2(&data, &NormalModel, &w, None, &cfg, quad)?
        }
        FitMethod::Kl => {
            let spec = LocalFitSpec {
                x0: args.tuning.x0,
                ..LocalFitSpec::new(args.tuning.k)
            };
            fit_robust_kl(&data, &spec, &cfg)?
        }
    };
    let se = fit.standard_errors();
    let names = ["mu", "sigma"];
    let text = fit_report(
        out,
        args,
        &names.map(String::from),
        &fit.theta,
        se.as_deref().map(|s| s.iter().map(|v| Some(*v)).collect()),
        fit.iterations,
        fit.converged,
        fit.n,
    );
    Ok(Output {
        text,
        exit_code: if fit.converged { 0 } else { 2 },
    })
}

fn fit_mvn(args: &FitArgs, input: &str, out: &Printer) -> CliResult<Output> {
    let rows = parse_csv(input, None)?;
    let p = rows[0].len();
    let n = rows.len();
    let (params, iterations, converged, mu_se) = match args.method {
        FitMethod::Ml => {
            let params = fit_ml_mvn(&rows)?;
            let cov = params.covariance();
            let se: Vec<f64> = (0..p).map(|i| (cov[(i, i)] / n as f64).sqrt()).collect();
            (params, 0, true, Some(se))
        }
        FitMethod::Kl => {
            let h = args.tuning.h.unwrap_or(args.tuning.k);
            let fit = fit_mvn_robust(&rows, &MvnLocalFitSpec::new(h), &SolverConfig::default())?;
            // The leading p unconstrained coordinates are μ itself.
            let se = fit
                .sandwich
                .as_ref()
                .map(|s| (0..p).map(|i| (s[(i, i)] / n as f64).max(0.0).sqrt()).collect());
            (fit.params, fit.iterations, fit.converged, se)
        }
        FitMethod::L2 => {
            return Err(CliError::Input("--method l2 is only available for --model normal".into()));
        }
    };
    let cov = params.covariance();
    let mut names: Vec<String> = (1..=p).map(|i| format!("mu{i}")).collect();
    let mut theta = params.mu().as_slice().to_vec();
    for i in 0..p {
        for j in 0..=i {
            names.push(format!("sigma{}{}", i + 1, j + 1));
            theta.push(cov[(i, j)]);
        }
    }
    let se = mu_se.map(|s| {
        let mut v: Vec<Option<f64>> = s.into_iter().map(Some).collect();
        v.resize(theta.len(), None);
        v
    });
    let text = fit_report(out, args, &names, &theta, se, iterations, converged, n);
    Ok(Output {
        text,
        exit_code: if converged { 0 } else { 2 },
    })
}

#[allow(clippy::too_many_arguments)]
fn fit_report(
    out: &Printer,
    args: &FitArgs,
    names: &[String],
    theta: &[f64],
    se: Option<Vec<Option<f64>>>,
    iterations: usize,
    converged: bool,
    n: usize,
) -> String {
    let se = se.unwrap_or_else(|| vec![None; theta.len()]);
    match out.format {
        Format::Json => out.json(json!({
            "schema": SCHEMA_VERSION,
            "command": "fit",
            "model": value_name(args.model),
            "method": value_name(args.method),
            "n": n,
            "parameters": names,
            "estimate": theta,
            "standard_error": se.iter().map(|s| s.map_or(Value::Null, float_or_null)).collect::<Vec<_>>(),
            "iterations": iterations,
            "converged": converged,
        })),
        Format::Csv => {
            let rows: Vec<Vec<String>> = names
                .iter()
                .zip(theta)
                .zip(&se)
                .map(|((name, t), s)| {
                    vec![
                        name.clone(),
                        out.number(*t),
                        out.opt(*s),
                        iterations.to_string(),
                        converged.to_string(),
                    ]
                })
                .collect();
            out.csv(&["parameter", "estimate", "standard_error", "iterations", "converged"], &rows)
        }
    }
}

fn value_name<T: clap::ValueEnum>(v: T) -> String {
    v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------- influence

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InfluenceMethod {
    L2,
    Kl,
}

/// Evenly spaced grid `lo, lo+step, …, ≤ hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

const MAX_GRID_POINTS: usize = 10_000_000;

impl Grid {
    pub fn points(&self) -> CliResult<Vec<f64>> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step.is_finite()) {
            return Err(CliError::Input("grid bounds and step must be finite".into()));
        }
        if self.step <= 0.0 {
            return Err(CliError::Input(format!("grid step must be positive, got {}", self.step)));
        }
        if self.hi < self.lo {
            return Err(CliError::Input(format!("grid upper bound {} is below lower bound {}", self.hi, self.lo)));
        }
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        if count > MAX_GRID_POINTS {
            return Err(CliError::Input(format!("grid has {count} points; the limit is {MAX_GRID_POINTS}")));
        }
        Ok((0..count).map(|i| self.lo + self.step * i as f64).collect())
    }
}

impl std::str::FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected LO:HI:STEP, got '{s}'"));
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| format!("'{p}' is not a number"));
        Ok(Grid {
            lo: num(parts[0])?,
            hi: num(parts[1])?,
            step: num(parts[2])?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfluenceArgs {
    pub method: InfluenceMethod,
    pub tuning: Tuning,
    pub theta: (f64, f64),
    pub grid: Grid,
}

/// One row per grid point: `(x, I_mu(x), I_sigma(x))`.
pub fn influence_rows(args: &InfluenceArgs) -> CliResult<(Vec<[f64; 3]>, DVector<f64>)> {
    let points = args.grid.points()?;
    let params = NormalParams::new(args.theta.0, args.theta.1)?;
    let theta = params.to_vec();
    let quad = QuadratureSpec::default();
    let collect = |f: &dyn Fn(f64) -> robustfit::Result<DVector<f64>>| -> CliResult<Vec<[f64; 3]>> {
        points
            .iter()
            .map(|&x| {
                let v = f(x)?;
                Ok([x, v[0], v[1]])
            })
            .collect()
    };
    match args.method {
        InfluenceMethod::L2 => {
            let w = args.tuning.l2_weight(params.mu, params.sigma)?;
            let curve = L2Influence::new(&theta, &w, &NormalModel, quad)?;
            Ok((collect(&|x| curve.at(x))?, curve.tail_limit()))
        }
        InfluenceMethod::Kl => {
            let x0 = args.tuning.x0.unwrap_or(params.mu);
            let h = args.tuning.h.unwrap_or(args.tuning.k * params.sigma);
            let curve = KlInfluence::new(&theta, x0, KernelSpec::normal(h)?, &NormalModel, quad)?;
            Ok((collect(&|x| curve.at(x))?, curve.tail_limit()))
        }
    }
}

pub fn cmd_influence(args: &InfluenceArgs, out: &Printer) -> CliResult<Output> {
    let (rows, limit) = influence_rows(args)?;
    let text = match out.format {
        Format::Csv => {
            let rows: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|v| out.number(*v)).collect()).collect();
            out.csv(&["x", "I_mu", "I_sigma"], &rows)
        }
        Format::Json => out.json(json!({
            "schema": SCHEMA_VERSION,
            "command": "influence",
            "method": value_name(args.method),
            "theta": [args.theta.0, args.theta.1],
            "tail_limit": limit.as_slice(),
            "x": rows.iter().map(|r| r[0]).collect::<Vec<_>>(),
            "I_mu": rows.iter().map(|r| r[1]).collect::<Vec<_>>(),
            "I_sigma": rows.iter().map(|r| r[2]).collect::<Vec<_>>(),
        })),
    };
    Ok(Output::ok(text))
}

// ---------------------------------------------------------------- asymptotics

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    L2Delta { delta: f64 },
    KlK { k: f64 },
    Ml,
}

impl Family {
    fn name(&self) -> &'static str {
        match self {
            Family::L2Delta { .. } => "l2-delta",
            Family::KlK { .. } => "kl-k",
            Family::Ml => "ml",
        }
    }
}

/// Closed-form and quadrature `(var μ̂, var σ̂)` at `N(0, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticsTable {
    pub closed_form: (f64, f64),
    pub quadrature: (f64, f64),
    pub efficiency: (f64, f64),
}

pub const SELF_CHECK_TOLERANCE: f64 = 1e-6;

pub fn asymptotics_table(family: Family, sigma: f64) -> CliResult<AsymptoticsTable> {
    let theta = NormalParams::new(0.0, sigma)?.to_vec();
    let quad = QuadratureSpec::default();
    let (closed_form, sandwich) = match family {
        Family::L2Delta { delta } => {
            let closed = normal_l2_variances(sigma, Some(delta))?;
            let w = WeightFunction::exp_delta(delta, 0.0, sigma)?;
            (closed, l2_report(&theta, &w, &NormalModel, quad)?.sandwich)
        }
        Family::KlK { k } => {
            let closed = normal_kl_variances(sigma, k)?;
            let kernel = KernelSpec::normal(k * sigma)?;
            (closed, kl_report(&theta, 0.0, &kernel, &NormalModel, quad)?.sandwich)
        }
        Family::Ml => {
            let closed = normal_ml_variances(sigma)?;
            let info = fisher_information(&theta, &NormalModel, quad)?;
            let inv = info
                .try_inverse()
                .ok_or_else(|| CliError::Numerical("Fisher information is singular".into()))?;
            (closed, inv)
        }
    };
    let quadrature = (sandwich[(0, 0)], sandwich[(1, 1)]);
    let (bm, bs) = normal_ml_variances(sigma)?;
    Ok(AsymptoticsTable {
        closed_form,
        quadrature,
        efficiency: (bm / closed_form.0, bs / closed_form.1),
    })
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

pub fn cmd_asymptotics(family: Family, sigma: f64, out: &Printer) -> CliResult<Output> {
    let t = asymptotics_table(family, sigma)?;
    let gap = relative_gap(t.closed_form.0, t.quadrature.0).max(relative_gap(t.closed_form.1, t.quadrature.1));
    let pass = gap <= SELF_CHECK_TOLERANCE;
    let tuning = match family {
        Family::L2Delta { delta } => json!({ "delta": delta }),
        Family::KlK { k } => json!({ "k": k }),
        Family::Ml => json!({}),
    };
    let text = match out.format {
        Format::Json => out.json(json!({
            "schema": SCHEMA_VERSION,
            "command": "asymptotics",
            "family": family.name(),
            "tuning": tuning,
            "sigma": sigma,
            "closed_form": { "var_mu": t.closed_form.0, "var_sigma": t.closed_form.1 },
            "quadrature": { "var_mu": t.quadrature.0, "var_sigma": t.quadrature.1 },
            "efficiency": { "mu": t.efficiency.0, "sigma": t.efficiency.1 },
            "max_relative_gap": gap,
            "self_check": if pass { "pass" } else { "fail" },
        })),
        Format::Csv => {
            let row = |label: &str, v: (f64, f64)| {
                vec![
                    label.to_string(),
                    out.number(v.0),
                    out.number(v.1),
                    out.number(t.efficiency.0),
                    out.number(t.efficiency.1),
                ]
            };
            out.csv(
                &["source", "var_mu", "var_sigma", "eff_mu", "eff_sigma"],
                &[row("closed_form", t.closed_form), row("quadrature", t.quadrature)],
            )
        }
    };
    Ok(Output {
        text,
        exit_code: if pass { 0 } else { 3 },
    })
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EstimatorKind {
    Ml,
    L2,
    L2ExpDelta,
    Kl,
    MvnKl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateArgs {
    /// Dimension of the true model; 1 means the univariate normal.
    pub dim: usize,
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub delta: Option<f64>,
    pub k: f64,
    pub h: f64,
    pub epsilon: f64,
    pub contaminant_point: Option<f64>,
    pub contaminant_normal: Option<(f64, f64)>,
    pub serial: bool,
}

impl Default for SimulateArgs {
    fn default() -> Self {
        Self {
            dim: 1,
            mu: 0.0,
            sigma: 1.0,
            n: 2000,
            reps: 1000,
            seed: 42,
            estimators: vec![EstimatorKind::Ml],
            delta: None,
            k: 2.0,
            h: 2.0,
            epsilon: 0.0,
            contaminant_point: None,
            contaminant_normal: None,
            serial: false,
        }
    }
}

impl SimulateArgs {
    pub fn scenario(&self) -> CliResult<ScenarioSpec> {
        let true_model = match self.dim {
            0 => return Err(CliError::Input("--dim must be at least 1".into())),
            1 => TrueModel::Normal(NormalParams::new(self.mu, self.sigma)?),
            p => TrueModel::Mvn {
                mu: vec![self.mu; p],
                covariance: (0..p)
                    .map(|i| (0..p).map(|j| if i == j { self.sigma * self.sigma } else { 0.0 }).collect())
                    .collect(),
            },
        };
        let contaminant = match (self.contaminant_point, self.contaminant_normal) {
            (Some(_), Some(_)) => {
                return Err(CliError::Input(
                    "--contaminant-point and --contaminant-normal are mutually exclusive".into(),
                ))
            }
            (Some(location), None) => Some(Contaminant::Point { location }),
            (None, Some((mean, sd))) => Some(Contaminant::Normal { mean, sd }),
            (None, None) => None,
        };
        let contamination = match contaminant {
            Some(contaminant) => Some(Contamination {
                epsilon: self.epsilon,
                contaminant,
            }),
            None if self.epsilon != 0.0 => {
                return Err(CliError::Input("--epsilon needs a contaminant".into()));
            }
            None => None,
        };
        let estimators = self
            .estimators
            .iter()
            .map(|e| {
                Ok(match e {
                    EstimatorKind::Ml => Estimator::Ml,
                    EstimatorKind::L2 => Estimator::L2Constant,
                    EstimatorKind::L2ExpDelta => Estimator::L2ExpDelta {
                        delta: self
                            .delta
                            .ok_or_else(|| CliError::Input("l2-exp-delta requires --delta".into()))?,
                    },
                    EstimatorKind::Kl => Estimator::Kl { k: self.k },
                    EstimatorKind::MvnKl => Estimator::MvnKl { h: self.h },
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let spec = ScenarioSpec {
            true_model,
            contamination,
            n: self.n,
            reps: self.reps,
            seed: self.seed,
            estimators,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn cmd_simulate(args: &SimulateArgs, out: &Printer) -> CliResult<Output> {
    let spec = args.scenario()?;
    let report = run_scenario_with(&spec, !args.serial)?;
    let text = match out.format {
        Format::Json => {
            let mut v = serde_json::to_value(&report)
                .map_err(|e| CliError::Numerical(format!("cannot serialize report: {e}")))?;
            if let Value::Object(o) = &mut v {
                o.insert("schema".into(), json!(SCHEMA_VERSION));
                o.insert("command".into(), json!("simulate"));
            }
            out.json(v)
        }
        Format::Csv => {
            let mut rows = Vec::new();
            for s in &report.estimators {
                for (i, name) in s.parameters.iter().enumerate() {
                    rows.push(vec![
                        s.label.clone(),
                        name.clone(),
                        out.number(s.mean_estimate[i]),
                        out.number(s.bias[i]),
                        out.number(s.n_variance[i]),
                        out.opt(s.theoretical_n_variance.as_ref().map(|t| t[i])),
                        s.successes.to_string(),
                        s.failures.to_string(),
                    ]);
                }
            }
            out.csv(
                &["estimator", "parameter", "mean", "bias", "n_variance", "theoretical_n_variance", "successes", "failures"],
                &rows,
            )
        }
    };
    Ok(Output {
        text,
        exit_code: if report.failed { 2 } else { 0 },
    })
}
