//! Experiment harness for the three pricing examples and the oracle suite.
//!
//! Runs produce an [`ExperimentReport`]; [`write_outputs`] turns it into one
//! CSV per table, plot data files and a JSON run manifest. Table CSVs contain
//! no timing data, so reruns with the same configuration are byte-identical;
//! wall times go to a separate timing CSV and the manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::ValueEnum;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{bs_put, error_rows, l2_error, ErrorRow};
use crate::cn_baseline::{march1d, MarchConfig, ReferenceSolution, ReferenceSpec};
use crate::contour::{kappa_bound, mu, ContourParams};
use crate::error::{Error, Result};
use crate::fem1d::{
    bilinear_b, l2_norm_sq, robin_coefficient, weighted_seminorm_sq, BoundarySpec, Market1D,
    Mesh1D, Payoff1D, PutProblem1D, SpatialOperator1D,
};
use crate::fem2d::{relative_l2_error, Basket2D, BasketProblem2D, EdgeSpec, Solver2D};
use crate::inversion::{invert_at, invert_scalar, Inversion};
use crate::parallel::{solve_ensemble, speedup_rows, EnsembleTiming, NodeSolver, SpeedupRow, TransformEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExampleId {
    Ex1,
    Ex2,
    Ex3,
    Oracle,
}

impl ExampleId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExampleId::Ex1 => "ex1",
            ExampleId::Ex2 => "ex2",
            ExampleId::Ex3 => "ex3",
            ExampleId::Oracle => "oracle",
        }
    }
}

/// Truncation comparison on a smaller square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryStudy {
    pub truncation: f64,
    pub meshes: Vec<usize>,
}

/// Time-marched reference for the basket errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub truncation: f64,
    pub cells: usize,
    pub dt: f64,
    pub cache: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupStudy {
    pub meshes: usize,
    pub workers: Vec<usize>,
}

fn default_workers() -> usize {
    1
}

fn default_solver() -> Solver2D {
    Solver2D::Iterative {
        rel_tol: 1e-11,
        max_iter: 5000,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub example: ExampleId,
    #[serde(default)]
    pub market: Option<Market1D>,
    #[serde(default)]
    pub basket: Option<Basket2D>,
    pub contours: Vec<ContourParams>,
    /// Node count `N` of the contour row used for the mesh sweeps.
    pub pricing_n: usize,
    pub meshes: Vec<usize>,
    /// Crank-Nicolson step counts, one per entry of `meshes`.
    #[serde(default)]
    pub cn_steps: Vec<usize>,
    /// Mesh of the sweep over contour rows.
    #[serde(default)]
    pub spectral_meshes: Option<usize>,
    #[serde(default)]
    pub boundary_study: Option<BoundaryStudy>,
    #[serde(default)]
    pub reference: Option<ReferenceConfig>,
    #[serde(default)]
    pub speedup: Option<SpeedupStudy>,
    #[serde(default = "default_solver")]
    pub solver: Solver2D,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: Self = serde_json::from_str(&text)?;
        config.check_shape()?;
        Ok(config)
    }

    fn check_shape(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.workers == 0 {
            return fail("workers must be at least 1");
        }
        if self.contours.is_empty() {
            return fail("at least one contour row is required");
        }
        if !self.contours.iter().any(|c| c.n == self.pricing_n) {
            return fail("pricing_n does not match any contour row");
        }
        if self.meshes.is_empty() || self.meshes.contains(&0) {
            return fail("meshes must be a non-empty list of positive counts");
        }
        match self.example {
            ExampleId::Ex1 | ExampleId::Ex2 => {
                let Some(m) = self.market else {
                    return fail("one-asset examples need a market section");
                };
                m.validate()?;
                if self.example == ExampleId::Ex1 && self.cn_steps.len() != self.meshes.len() {
                    return fail("cn_steps needs one entry per mesh");
                }
            }
            ExampleId::Ex3 => {
                let Some(b) = self.basket else {
                    return fail("the basket example needs a basket section");
                };
                b.validate()?;
                if self.reference.is_none() {
                    return fail("the basket example needs a reference section");
                }
            }
            ExampleId::Oracle => {}
        }
        Ok(())
    }

    pub fn contour(&self, n: usize) -> Result<ContourParams> {
        self.contours
            .iter()
            .copied()
            .find(|c| c.n == n)
            .ok_or_else(|| Error::Config(format!("no contour row with n = {n}")))
    }

    /// Coercivity shift of the problem; the basket uses the smaller diagonal
    /// variance as its constant volatility.
    pub fn mu(&self) -> Result<f64> {
        match (self.market, self.basket) {
            (Some(m), _) => mu(m.r, m.sigma, m.sigma, true),
            (None, Some(b)) => {
                let sigma = b.a[0][0].min(b.a[1][1]).sqrt();
                mu(b.r, sigma, sigma, true)
            }
            _ => Err(Error::Config("no market or basket section".into())),
        }
    }

    /// Checks every contour row against its `kappa` before any solve.
    pub fn kappa_checks(&self) -> Result<Vec<KappaCheck>> {
        let mu = self.mu()?;
        self.contours
            .iter()
            .map(|c| {
                let kappa = kappa_bound(c.s, mu);
                c.ensure_valid(kappa)?;
                Ok(KappaCheck {
                    n: c.n,
                    s: c.s,
                    kappa,
                    crossing: c.crossing(),
                })
            })
            .collect()
    }

    pub fn maturity(&self) -> Result<f64> {
        match (self.market, self.basket) {
            (Some(m), _) => Ok(m.maturity),
            (None, Some(b)) => Ok(b.maturity),
            _ => Err(Error::Config("no market or basket section".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaCheck {
    pub n: usize,
    pub s: f64,
    pub kappa: f64,
    pub crossing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TableKind {
    CrankNicolson,
    Laplace,
    Spectral,
    Boundary,
}

/// One row of any convergence table; unused columns are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub z_count: Option<usize>,
    pub time_steps: Option<usize>,
    pub meshes: usize,
    pub two_d: bool,
    pub mesh_size: f64,
    pub error: f64,
    pub rate: Option<f64>,
    /// Transparent-edge error of the boundary comparison.
    pub second_error: Option<f64>,
    pub contour: Option<ContourParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub name: String,
    pub kind: TableKind,
    pub relative: bool,
    pub rows: Vec<TableRow>,
}

impl ReportTable {
    pub fn errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error).collect()
    }

    pub fn rates(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.rate).collect()
    }

    pub fn second_errors(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.second_error).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRecord {
    pub label: String,
    pub relative_imag_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRecord {
    pub label: String,
    pub seconds: f64,
}

/// Columns of numbers written verbatim as plot data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotData {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub example: ExampleId,
    pub kappa: Vec<KappaCheck>,
    pub tables: Vec<ReportTable>,
    pub speedups: Vec<SpeedupRow>,
    /// Whether every speedup run produced a bitwise identical ensemble.
    pub deterministic: Option<bool>,
    pub residuals: Vec<ResidualRecord>,
    pub timings: Vec<TimingRecord>,
    #[serde(skip)]
    pub plots: Vec<PlotData>,
}

impl ExperimentReport {
    fn new(example: ExampleId, kappa: Vec<KappaCheck>) -> Self {
        Self {
            example,
            kappa,
            tables: Vec::new(),
            speedups: Vec::new(),
            deterministic: None,
            residuals: Vec::new(),
            timings: Vec::new(),
            plots: Vec::new(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&ReportTable> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn max_imag_residual(&self) -> f64 {
        self.residuals
            .iter()
            .map(|r| r.relative_imag_residual)
            .fold(0.0, f64::max)
    }
}

fn rows_from_errors(
    entries: &[(f64, usize, f64)],
    z_count: Option<usize>,
    time_steps: &[Option<usize>],
    two_d: bool,
) -> Vec<TableRow> {
    error_rows(entries)
        .into_iter()
        .zip(time_steps)
        .map(|(ErrorRow { mesh_size, elements, error, rate }, &steps)| TableRow {
            z_count,
            time_steps: steps,
            meshes: elements,
            two_d,
            mesh_size,
            error,
            rate,
            second_error: None,
            contour: None,
        })
        .collect()
}

/// Solves on the conjugate half of `contour` and inverts at `t`.
fn price<P: NodeSolver>(
    problem: &P,
    contour: &ContourParams,
    workers: usize,
    t: f64,
    label: String,
    report: &mut ExperimentReport,
) -> Result<(Inversion, TransformEnsemble, EnsembleTiming)> {
    let (ensemble, timing) = solve_ensemble(problem, contour, workers)?;
    let inv = invert_at(&ensemble, t)?;
    report.residuals.push(ResidualRecord {
        label,
        relative_imag_residual: inv.relative_imag_residual(),
    });
    Ok((inv, ensemble, timing))
}

fn exact_put(m: &Market1D) -> impl Fn(f64) -> f64 + '_ {
    move |x| bs_put(x, m.maturity, m.strike, m.r, m.sigma).expect("validated market")
}

fn laplace_sweep_1d(
    config: &ExperimentConfig,
    market: Market1D,
    bc: BoundarySpec,
    label: &str,
    report: &mut ExperimentReport,
) -> Result<(Vec<TableRow>, Vec<f64>)> {
    let contour = config.contour(config.pricing_n)?;
    let exact = exact_put(&market);
    let mut entries = Vec::new();
    let mut last = Vec::new();
    let start = Instant::now();
    for &m in &config.meshes {
        let problem = PutProblem1D::new(market, m, bc, Payoff1D::Put { strike: market.strike });
        let (inv, _, _) = price(&problem, &contour, config.workers, market.maturity, format!("{label} M={m}"), report)?;
        entries.push((problem.mesh().h(), m, l2_error(&inv.values, &exact, market.truncation)));
        last = inv.values;
    }
    report.timings.push(TimingRecord {
        label: label.to_string(),
        seconds: start.elapsed().as_secs_f64(),
    });
    let steps = vec![None; entries.len()];
    Ok((rows_from_errors(&entries, Some(contour.n), &steps, false), last))
}

/// Crank-Nicolson sweep, Laplace sweep on the pricing contour, and the sweep
/// over contour rows on the fine mesh.
pub fn run_example1(config: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_example(config, ExampleId::Ex1)?;
    let kappa = config.kappa_checks()?;
    let market = config.market.expect("checked");
    let mut report = ExperimentReport::new(ExampleId::Ex1, kappa);
    let bc = BoundarySpec::put_dirichlet(&market);
    let payoff = Payoff1D::Put { strike: market.strike };
    let exact = exact_put(&market);

    let start = Instant::now();
    let mut entries = Vec::new();
    for (&m, &steps) in config.meshes.iter().zip(&config.cn_steps) {
        let mesh = Mesh1D::uniform(market.truncation, m);
        let op = SpatialOperator1D::new(mesh, market);
        let u = march1d(&op, &bc, &payoff.load_vector(&mesh), MarchConfig::new(steps)?)?;
        entries.push((mesh.h(), m, l2_error(&u, &exact, market.truncation)));
    }
    report.timings.push(TimingRecord {
        label: "crank-nicolson sweep".into(),
        seconds: start.elapsed().as_secs_f64(),
    });
    let steps: Vec<Option<usize>> = config.cn_steps.iter().map(|&s| Some(s)).collect();
    report.tables.push(ReportTable {
        name: "crank_nicolson_sweep".into(),
        kind: TableKind::CrankNicolson,
        relative: false,
        rows: rows_from_errors(&entries, None, &steps, false),
    });

    let (rows, _) = laplace_sweep_1d(config, market, bc, "laplace sweep", &mut report)?;
    report.tables.push(ReportTable {
        name: "laplace_sweep".into(),
        kind: TableKind::Laplace,
        relative: false,
        rows,
    });

    if let Some(m) = config.spectral_meshes {
        let start = Instant::now();
        let problem = PutProblem1D::new(market, m, bc, payoff);
        let mut entries = Vec::new();
        for contour in &config.contours {
            let label = format!("contour sweep N={}", contour.n);
            let (inv, _, _) = price(&problem, contour, config.workers, market.maturity, label, &mut report)?;
            entries.push((problem.mesh().h(), m, l2_error(&inv.values, &exact, market.truncation)));
        }
        report.timings.push(TimingRecord {
            label: "contour sweep".into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        let steps = vec![None; entries.len()];
        let mut rows = rows_from_errors(&entries, None, &steps, false);
        for (row, contour) in rows.iter_mut().zip(&config.contours) {
            row.z_count = Some(contour.n);
            row.contour = Some(*contour);
        }
        report.tables.push(ReportTable {
            name: "contour_sweep".into(),
            kind: TableKind::Spectral,
            relative: false,
            rows,
        });
    }
    Ok(report)
}

/// Dirichlet and transparent truncation at the configured length.
pub fn run_example2(config: &ExperimentConfig) -> Result<ExperimentReport> {
    expect_example(config, ExampleId::Ex2)?;
    let kappa = config.kappa_checks()?;
    let market = config.market.expect("checked");
    let mut report = ExperimentReport::new(ExampleId::Ex2, kappa);

    let (rows, dirichlet) = laplace_sweep_1d(config, market, BoundarySpec::put_dirichlet(&market), "dirichlet sweep", &mut report)?;
    report.tables.push(ReportTable {
        name: "dirichlet_truncation".into(),
        kind: TableKind::Laplace,
        relative: false,
        rows,
    });
    let (rows, transparent) = laplace_sweep_1d(config, market, BoundarySpec::put_transparent(&market), "transparent sweep", &mut report)?;
    report.tables.push(ReportTable {
        name: "transparent_truncation".into(),
        kind: TableKind::Laplace,
        relative: false,
        rows,
    });

    let finest = *config.meshes.last().expect("checked");
    let mesh = Mesh1D::uniform(market.truncation, finest);
    let exact = exact_put(&market);
    report.plots.push(PlotData {
        name: "truncation_curves".into(),
        header: ["x", "exact", "dirichlet", "transparent"].map(String::from).to_vec(),
        rows: (0..mesh.node_count())
            .map(|i| {
                let x = mesh.x(i);
                vec![x, exact(x), dirichlet[i], transparent[i]]
            })
            .collect(),
    });
    Ok(report)
}

/// Cache location of the reference, resolved against `base` when relative.
pub fn reference_path(config: &ExperimentConfig, base: &Path) -> Result<PathBuf> {
    let r = config
        .reference
        .as_ref()
        .ok_or_else(|| Error::Config("no reference section".into()))?;
    Ok(if r.cache.is_absolute() {
        r.cache.clone()
    } else {
        base.join(&r.cache)
    })
}

pub fn reference_spec(config: &ExperimentConfig) -> Result<ReferenceSpec> {
    let (Some(basket), Some(r)) = (config.basket, config.reference.as_ref()) else {
        return Err(Error::Config("reference needs basket and reference sections".into()));
    };
    Ok(ReferenceSpec {
        basket: basket.truncated(r.truncation, r.truncation),
        cells: r.cells,
        dt: r.dt,
    })
}

/// Loads the cached reference or builds it by time marching.
pub fn ensure_reference(config: &ExperimentConfig, base: &Path, rebuild: bool) -> Result<ReferenceSolution> {
    ReferenceSolution::load_or_build(&reference_path(config, base)?, &reference_spec(config)?, rebuild)
}

/// Basket convergence sweep, boundary comparison and worker scaling against
/// the reference solution. Relative cache paths resolve against `base`.
pub fn run_example3(config: &ExperimentConfig, base: &Path) -> Result<ExperimentReport> {
    expect_example(config, ExampleId::Ex3)?;
    let kappa = config.kappa_checks()?;
    let basket = config.basket.expect("checked");
    let contour = config.contour(config.pricing_n)?;
    let mut report = ExperimentReport::new(ExampleId::Ex3, kappa);

    let start = Instant::now();
    let reference = ensure_reference(config, base, false)?;
    report.timings.push(TimingRecord {
        label: "reference".into(),
        seconds: start.elapsed().as_secs_f64(),
    });

    let sweep = |b: Basket2D, edges: EdgeSpec, meshes: &[usize], label: &str, report: &mut ExperimentReport| -> Result<(Vec<(f64, usize, f64)>, Vec<f64>)> {
        let start = Instant::now();
        let mut entries = Vec::new();
        let mut last = Vec::new();
        for &m in meshes {
            let problem = BasketProblem2D::new(b, m, m, edges, config.solver)?;
            let (inv, _, _) = price(&problem, &contour, config.workers, b.maturity, format!("{label} {m}x{m}"), report)?;
            let err = relative_l2_error(problem.mesh(), &inv.values, &reference.mesh, &reference.values)?;
            entries.push((problem.mesh().h1(), m, err));
            last = inv.values;
        }
        report.timings.push(TimingRecord {
            label: label.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok((entries, last))
    };

    let (entries, surface) = sweep(basket, EdgeSpec::basket_dirichlet(), &config.meshes, "dirichlet sweep", &mut report)?;
    let steps = vec![None; entries.len()];
    report.tables.push(ReportTable {
        name: "basket_sweep".into(),
        kind: TableKind::Laplace,
        relative: true,
        rows: rows_from_errors(&entries, Some(contour.n), &steps, true),
    });
    let finest = *config.meshes.last().expect("checked");
    let mesh = crate::fem2d::Mesh2D::uniform(basket.l1, basket.l2, finest, finest);
    report.plots.push(PlotData {
        name: "basket_surface".into(),
        header: ["x1", "x2", "price"].map(String::from).to_vec(),
        rows: (0..mesh.node_count())
            .map(|k| {
                let [x1, x2] = mesh.coords(k);
                vec![x1, x2, surface[k]]
            })
            .collect(),
    });

    if let Some(study) = &config.boundary_study {
        let b = basket.truncated(study.truncation, study.truncation);
        let (dir, _) = sweep(b, EdgeSpec::basket_dirichlet(), &study.meshes, "boundary study dirichlet", &mut report)?;
        let (tra, _) = sweep(b, EdgeSpec::basket_transparent(), &study.meshes, "boundary study transparent", &mut report)?;
        let rows = dir
            .iter()
            .zip(&tra)
            .map(|(&(h, m, e_d), &(_, _, e_t))| TableRow {
                z_count: Some(contour.n),
                time_steps: None,
                meshes: m,
                two_d: true,
                mesh_size: h,
                error: e_d,
                rate: None,
                second_error: Some(e_t),
                contour: None,
            })
            .collect();
        report.tables.push(ReportTable {
            name: "basket_truncation".into(),
            kind: TableKind::Boundary,
            relative: true,
            rows,
        });
    }

    if let Some(study) = &config.speedup {
        let problem = BasketProblem2D::new(basket, study.meshes, study.meshes, EdgeSpec::basket_dirichlet(), config.solver)?;
        let (speedups, deterministic) = speedup_study(&problem, &contour, &study.workers)?;
        report.speedups = speedups;
        report.deterministic = Some(deterministic);
    }
    Ok(report)
}

/// Times the ensemble at each worker count and checks the ensembles agree bitwise.
pub fn speedup_study<P: NodeSolver>(
    problem: &P,
    contour: &ContourParams,
    workers: &[usize],
) -> Result<(Vec<SpeedupRow>, bool)> {
    let mut timings = Vec::new();
    let mut first: Option<TransformEnsemble> = None;
    let mut identical = true;
    for &w in workers {
        let (ensemble, timing) = solve_ensemble(problem, contour, w)?;
        timings.push(timing);
        match &first {
            None => first = Some(ensemble),
            Some(base) => identical &= *base == ensemble,
        }
    }
    Ok((speedup_rows(&timings)?, identical))
}

fn expect_example(config: &ExperimentConfig, id: ExampleId) -> Result<()> {
    config.check_shape()?;
    if config.example != id {
        return Err(Error::Config(format!(
            "configuration is for {}, not {}",
            config.example.as_str(),
            id.as_str()
        )));
    }
    Ok(())
}

/// Dispatches on the example id of `config`.
pub fn run(config: &ExperimentConfig, base: &Path) -> Result<ExperimentReport> {
    match config.example {
        ExampleId::Ex1 => run_example1(config),
        ExampleId::Ex2 => run_example2(config),
        ExampleId::Ex3 => run_example3(config, base),
        ExampleId::Oracle => Err(Error::Config("use the oracle command for the oracle suite".into())),
    }
}

/// Scientific notation with a signed two-digit exponent, e.g. `7.3270E-04`.
pub fn sci(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{:.*E}", digits, x);
    let (mantissa, exp) = s.split_once('E').expect("exponent present");
    let e: i32 = exp.parse().expect("integer exponent");
    format!("{mantissa}E{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
}

fn rate_cell(rate: Option<f64>) -> String {
    match rate.map(|r| format!("{r:.3}")) {
        Some(s) if s == "-0.000" => "0.000".into(),
        other => other.unwrap_or_default(),
    }
}

fn meshes_cell(row: &TableRow) -> String {
    if row.two_d {
        format!("{0}x{0}", row.meshes)
    } else {
        row.meshes.to_string()
    }
}

fn table_records(table: &ReportTable) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let err_col = if table.relative { "Relative error in L2" } else { "Error in L2" };
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    match table.kind {
        TableKind::CrankNicolson => (
            vec!["Time steps", "Number of space meshes", "Mesh size", err_col, "Reduction rate"],
            table
                .rows
                .iter()
                .map(|r| vec![opt(r.time_steps), meshes_cell(r), r.mesh_size.to_string(), sci(r.error, 4), rate_cell(r.rate)])
                .collect(),
        ),
        TableKind::Laplace => (
            vec!["Number of z", "Number of space meshes", "Mesh size", err_col, "Reduction rate"],
            table
                .rows
                .iter()
                .map(|r| vec![opt(r.z_count), meshes_cell(r), r.mesh_size.to_string(), sci(r.error, 4), rate_cell(r.rate)])
                .collect(),
        ),
        TableKind::Spectral => (
            vec!["Number of z", "Number of space meshes", err_col, "Reduction rate", "gamma", "nu", "s", "tau"],
            table
                .rows
                .iter()
                .map(|r| {
                    let c = r.contour.expect("contour rows carry their parameters");
                    vec![opt(r.z_count), meshes_cell(r), sci(r.error, 4), rate_cell(r.rate), c.gamma.to_string(), c.nu.to_string(), c.s.to_string(), c.tau.to_string()]
                })
                .collect(),
        ),
        TableKind::Boundary => (
            vec!["Number of z", "Number of space meshes", "Mesh size", "Relative error in L2 (Dirichlet)", "Relative error in L2 (Transparent)"],
            table
                .rows
                .iter()
                .map(|r| {
                    vec![opt(r.z_count), meshes_cell(r), r.mesh_size.to_string(), sci(r.error, 4), r.second_error.map(|e| sci(e, 4)).unwrap_or_default()]
                })
                .collect(),
        ),
    }
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    example: ExampleId,
    config: &'a ExperimentConfig,
    workers: usize,
    started_unix: f64,
    finished_unix: f64,
    kappa: &'a [KappaCheck],
    deterministic: Option<bool>,
    max_relative_imag_residual: f64,
    imag_residuals: &'a [ResidualRecord],
    timings: &'a [TimingRecord],
    files: Vec<String>,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Writes the table CSVs, plot data, timing CSV and `manifest.json` into `out`.
pub fn write_outputs(
    report: &ExperimentReport,
    config: &ExperimentConfig,
    out: &Path,
    started_unix: f64,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for table in &report.tables {
        let path = out.join(format!("{}.csv", table.name));
        let (header, rows) = table_records(table);
        write_csv(&path, &header, &rows)?;
        files.push(path);
    }
    for plot in &report.plots {
        let path = out.join(format!("{}.csv", plot.name));
        let header: Vec<&str> = plot.header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = plot.rows.iter().map(|r| r.iter().map(|&v| sci(v, 9)).collect()).collect();
        write_csv(&path, &header, &rows)?;
        files.push(path);
    }
    let timing_path = out.join("timings.csv");
    let mut rows: Vec<Vec<String>> = report
        .timings
        .iter()
        .map(|t| vec![t.label.clone(), String::new(), format!("{:.3}", t.seconds), String::new(), String::new()])
        .collect();
    rows.extend(report.speedups.iter().map(|s| {
        vec![
            "ensemble".into(),
            s.workers.to_string(),
            format!("{:.3}", s.wall_seconds),
            format!("{:.2}", s.speedup),
            format!("{:.3}", s.efficiency()),
        ]
    }));
    write_csv(&timing_path, &["Stage", "Number of CPUs", "Time (sec)", "Speedup", "Efficiency"], &rows)?;
    files.push(timing_path);

    let manifest_path = out.join("manifest.json");
    let manifest = Manifest {
        tool: "price",
        version: env!("CARGO_PKG_VERSION"),
        example: report.example,
        config,
        workers: config.workers,
        started_unix,
        finished_unix: unix_now(),
        kappa: &report.kappa,
        deterministic: report.deterministic,
        max_relative_imag_residual: report.max_imag_residual(),
        imag_residuals: &report.residuals,
        timings: &report.timings,
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    files.push(manifest_path);
    Ok(files)
}

/// Outcome of one oracle comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

impl OracleCheck {
    fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            passed: value <= bound,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {} (bound {})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            sci(self.value, 4),
            sci(self.bound, 4)
        )
    }
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    let mut v: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    v[n - 1] = Complex64::new(0.0, 0.0);
    v
}

/// Scalar inversion oracles, the kappa value, and randomised checks of the
/// weighted Poincare and coercivity inequalities and of the Robin root branch.
pub fn run_oracles(seed: u64, fields: usize) -> Result<Vec<OracleCheck>> {
    let mut checks = Vec::new();
    let contours = crate::contour::example1_contours();
    let pricing = *contours.iter().find(|c| c.n == 15).expect("tabulated row");

    for a in [0.05, 1.0, 5.0] {
        let v = invert_scalar(|z| (z + a).inv(), &pricing, 1.0)?;
        let exact = (-a as f64).exp();
        checks.push(OracleCheck::at_most(format!("inverse of 1/(z+{a}) at t=1"), ((v - exact) / exact).abs(), 1e-6));
    }
    let v = invert_scalar(|z| (z * z).inv(), &pricing, 1.0)?;
    checks.push(OracleCheck::at_most("inverse of 1/z^2 at t=1", (v - 1.0).abs(), 1e-6));

    let kappa = kappa_bound(0.4, mu(0.05, 0.3, 0.3, true)?);
    checks.push(OracleCheck::at_most("kappa(s=0.4, r=0.05, sigma=0.3) vs 0.01811", (kappa - 0.01811).abs(), 5e-6));

    let market = Market1D::new(0.05, 0.3, 50.0, 1.0, 200.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu1 = mu(market.r, market.sigma, market.sigma, true)?;
    let mut worst_poincare = f64::NEG_INFINITY;
    let mut worst_coercive = f64::NEG_INFINITY;
    for k in 0..fields {
        let elements = 2 + k % 60;
        let mesh = Mesh1D::uniform(market.truncation, elements);
        let op = SpatialOperator1D::new(mesh, market);
        let v = random_field(&mut rng, mesh.node_count());
        let semi = weighted_seminorm_sq(&mesh, &v);
        worst_poincare = worst_poincare.max(l2_norm_sq(&mesh, &v).sqrt() - 2.0 * semi.sqrt());
        let w = random_field(&mut rng, mesh.node_count());
        let re_b = bilinear_b(&op, &w, &w).re;
        let lower = 0.25 * market.sigma.powi(2) * weighted_seminorm_sq(&mesh, &w) - mu1 * l2_norm_sq(&mesh, &w);
        worst_coercive = worst_coercive.max(lower - re_b);
    }
    checks.push(OracleCheck::at_most(format!("weighted Poincare over {fields} fields, max(|v| - 2|v|_V)"), worst_poincare.max(0.0), 0.0));
    checks.push(OracleCheck::at_most(format!("coercivity over {fields} fields, max(lower - Re B)"), worst_coercive.max(0.0), 0.0));

    // decaying exterior branch: Re(c L sigma^2) + (r - sigma^2/2) <= 0
    let (r, sigma, length) = (market.r, market.sigma, market.truncation);
    let drift = r - 0.5 * sigma * sigma;
    let mut worst_branch = f64::NEG_INFINITY;
    let mut rows = contours.clone();
    rows.push(crate::contour::example3_contour());
    for c in &rows {
        for node in c.nodes() {
            let coef = robin_coefficient(node.z, r, sigma, length)?;
            worst_branch = worst_branch.max(coef.re * length * sigma * sigma + drift);
        }
    }
    checks.push(OracleCheck::at_most("Robin decaying branch on all contour nodes", worst_branch.max(0.0), 0.0));
    Ok(checks)
}

/// Renders a table as it would be written to CSV, for terminal output.
pub fn render_table(table: &ReportTable) -> String {
    let (header, rows) = table_records(table);
    let mut s = String::new();
    let _ = writeln!(s, "{}", table.name);
    let _ = writeln!(s, "  {}", header.join(" | "));
    for r in rows {
        let _ = writeln!(s, "  {}", r.join(" | "));
    }
    s
}
