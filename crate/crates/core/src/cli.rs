//! Pipeline configs, JSON reports and the verification suites behind the `loopforge` binary.
//!
//! Exit codes: 0 success, 2 parse or usage error, 3 numeric failure, 4 residual over tolerance.

use crate::dpw::{sym_bobenko, vacuum_unitary, DomainGrid, FrameField, SurfaceMesh};
use crate::dressing::{
    blaschke_dressing, dress, dress_loop, flow, loop_group_membership, simple_dress, simple_dress_loop, simple_factor,
    FactorKind, SimpleFactor, SimpleFactorRecord,
};
use crate::error::Error;
use crate::factorization::IwasawaOptions;
use crate::loopcore::{Annulus, CircleGrid, Loop};
use crate::mat2::{c, Mat2};
use crate::monodromy::{eigen_data, factorize_commuting, monodromy, spectral_set, MonodromyReport};
use crate::surfaces::{
    axis_fit, bubbleton, choose_radius, delaunay, det_condition, export_mesh, perturbed_cylinder, solve_p_series,
    transport_monodromy, vacuum, vacuum_iwasawa_error, write_report, DelaunayResidue, PerturbedOptions,
    SingularPotential,
};
use crate::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

pub const SCHEMA: &str = "loopforge/1";

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_RESIDUAL: i32 = 4;

/// Named verification suites, in the order `all` runs them.
pub const SUITES: [&str; 10] =
    ["iwasawa", "cylinder", "delaunay", "dressing", "blaschke", "parity", "singular", "bubbleton", "flow", "commuting"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Example {
    Vacuum,
    Delaunay,
    Perturbed,
    Bubbleton,
}

impl Example {
    fn name(self) -> &'static str {
        match self {
            Example::Vacuum => "vacuum",
            Example::Delaunay => "delaunay",
            Example::Perturbed => "perturbed",
            Example::Bubbleton => "bubbleton",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Vacuum period; Delaunay-type examples always close along `2 pi i`.
    #[serde(default = "default_q")]
    pub q: [f64; 2],
    #[serde(default = "quarter")]
    pub wa: f64,
    #[serde(default = "quarter")]
    pub wb: f64,
    /// Size of the holomorphic perturbation of the perturbed cylinder.
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Upper bound for the series radius; defaults to 1, or `0.75 min |alpha|` under a
    /// bubbleton.
    #[serde(default)]
    pub r_max: Option<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Grid index `[i, j]` of the base point; defaults to the grid point nearest `w = 0`.
    #[serde(default)]
    pub base: Option<[usize; 2]>,
    /// Surface the bubbleton is built on: `vacuum` or `perturbed`.
    #[serde(default = "default_underlying")]
    pub underlying: Example,
}

impl Default for Params {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty params")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nu: usize,
    pub nv: usize,
    /// `[u_min, u_max, v_min, v_max]`.
    #[serde(default)]
    pub extent: Option<[f64; 4]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default)]
    pub mesh: Option<String>,
    #[serde(default)]
    pub report: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlaschkeConfig {
    #[serde(default = "default_q")]
    pub q: [f64; 2],
    pub alphas: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// Coefficients of the odd powers `l^{-1}, l^{-3}, ...`.
    pub phi: Vec<[f64; 2]>,
    pub t: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DressingConfig {
    #[serde(default)]
    pub simple_factors: Vec<SimpleFactorRecord>,
    #[serde(default)]
    pub blaschke: Option<BlaschkeConfig>,
    #[serde(default)]
    pub flow: Option<FlowConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericConfig {
    /// Samples per spectral circle; defaults to 256, or 512 for perturbed surfaces.
    #[serde(default)]
    pub count: Option<usize>,
    /// Band limit of the vacuum Iwasawa check.
    #[serde(default)]
    pub band: Option<usize>,
    /// Overrides of the default tolerances, by residual name.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

impl Default for NumericConfig {
    fn default() -> Self {
        NumericConfig { count: None, band: None, tolerances: BTreeMap::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub example: Example,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default = "default_lambda0")]
    pub lambda0: [f64; 2],
    #[serde(rename = "H", default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub dressing: DressingConfig,
    #[serde(default)]
    pub numeric: NumericConfig,
}

fn default_q() -> [f64; 2] {
    [0.0, PI]
}
fn quarter() -> f64 {
    0.25
}
fn default_eps() -> f64 {
    0.1
}
fn default_n_max() -> usize {
    12
}
fn default_margin() -> f64 {
    0.05
}
fn default_underlying() -> Example {
    Example::Vacuum
}
fn default_lambda0() -> [f64; 2] {
    [1.0, 0.0]
}
fn default_h() -> f64 {
    0.5
}

fn cx(p: [f64; 2]) -> C64 {
    c(p[0], p[1])
}

/// Default tolerances by residual name.
pub fn default_tolerances() -> BTreeMap<String, f64> {
    [
        ("iwasawa", 1e-8),
        ("closing_value", 1e-6),
        ("closing_derivative", 1e-6),
        ("monodromy", 1e-6),
        ("z_independence", 1e-6),
        ("unitarity", 1e-6),
        ("neck", 2e-2),
        ("admissibility", crate::surfaces::TOL_ADMISSIBLE),
        ("conjugation", 1e-6),
        ("dressing", 1e-6),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// A config error with the position reported by the JSON parser when there is one.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| ConfigError {
            message: e.to_string(),
            line: Some(e.line()),
            column: Some(e.column()),
        })?;
        cfg.validate().map_err(|message| ConfigError { message, line: None, column: None })?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        let l0 = cx(self.lambda0);
        if (l0.norm() - 1.0).abs() > 1e-12 {
            return Err(format!("lambda0 must lie on the unit circle, |lambda0| = {}", l0.norm()));
        }
        if !(self.h > 0.0) {
            return Err(format!("H must be positive, got {}", self.h));
        }
        if self.example == Example::Bubbleton {
            if !matches!(self.params.underlying, Example::Vacuum | Example::Perturbed) {
                return Err("params.underlying must be vacuum or perturbed".into());
            }
            match self.dressing.simple_factors.first() {
                None => return Err("a bubbleton needs dressing.simple_factors[0]".into()),
                Some(r) if r.kind == FactorKind::Untwisted => {
                    return Err("the bubbleton factor must be a twisted kind".into())
                }
                _ => {}
            }
        }
        if let Some(g) = &self.grid {
            if g.nu < 2 || g.nv < 2 {
                return Err("grid needs nu, nv >= 2".into());
            }
        }
        for k in self.numeric.tolerances.keys() {
            if !default_tolerances().contains_key(k) {
                return Err(format!("unknown tolerance {k:?}"));
            }
        }
        Ok(())
    }

    fn underlying(&self) -> Example {
        if self.example == Example::Bubbleton {
            self.params.underlying
        } else {
            self.example
        }
    }

    fn count(&self) -> usize {
        self.numeric.count.unwrap_or(if self.underlying() == Example::Perturbed { 512 } else { 256 })
    }

    fn grid(&self) -> crate::Result<DomainGrid> {
        let (nu, nv, ext) = match self.underlying() {
            Example::Delaunay => (33, 9, [-4.0, 4.0, 0.0, 2.0 * PI]),
            Example::Perturbed => (3, 5, [-0.5, 0.5, -PI, PI]),
            _ if self.example == Example::Bubbleton => (5, 5, [-1.0, 1.0, 0.0, PI]),
            _ => (17, 17, [-1.0, 1.0, 0.0, PI]),
        };
        let (nu, nv, ext) = match &self.grid {
            Some(g) => (g.nu, g.nv, g.extent.unwrap_or(ext)),
            None => (nu, nv, ext),
        };
        DomainGrid::rect((ext[0], ext[1]), (ext[2], ext[3]), nu, nv)
    }

    fn tolerance(&self, name: &str) -> f64 {
        self.numeric.tolerances.get(name).copied().unwrap_or_else(|| default_tolerances()[name])
    }

    fn file_names(&self) -> (String, String) {
        let stem = self.example.name();
        (
            self.outputs.mesh.clone().unwrap_or_else(|| format!("{stem}.obj")),
            self.outputs.report.clone().unwrap_or_else(|| format!("{stem}.json")),
        )
    }
}

/// Residuals of one run, checked against the configured tolerances.
#[derive(Default)]
struct Ledger {
    residuals: Map<String, Value>,
    tolerances: Map<String, Value>,
    failures: Vec<String>,
}

impl Ledger {
    fn check(&mut self, cfg: &PipelineConfig, key: &str, tol_name: &str, value: f64) {
        let tol = cfg.tolerance(tol_name);
        self.residuals.insert(key.into(), json!(value));
        self.tolerances.insert(key.into(), json!(tol));
        if !(value <= tol) {
            self.failures.push(key.into());
        }
    }

    fn closing(&mut self, cfg: &PipelineConfig, prefix: &str, m: &MonodromyReport) {
        self.check(cfg, &format!("{prefix}closing_value"), "closing_value", m.closing_value);
        self.check(cfg, &format!("{prefix}closing_derivative"), "closing_derivative", m.closing_derivative);
        self.check(cfg, &format!("{prefix}z_independence"), "z_independence", m.z_independence);
    }
}

/// Outcome of [`run_config`]: exit code and the report that was written.
pub struct RunOutcome {
    pub code: i32,
    pub report: Value,
    pub report_path: PathBuf,
}

fn error_kind(e: &Error) -> (&'static str, i32) {
    match e {
        Error::Residual { .. } => ("residual", EXIT_RESIDUAL),
        _ => ("numeric", EXIT_NUMERIC),
    }
}

fn frames_mesh(frames: &FrameField, cfg: &PipelineConfig) -> crate::Result<SurfaceMesh> {
    sym_bobenko(frames, cx(cfg.lambda0), cfg.h)
}

struct Built {
    frames: FrameField,
    mesh: SurfaceMesh,
    mono: MonodromyReport,
}

fn run_example(cfg: &PipelineConfig, ledger: &mut Ledger, data: &mut Map<String, Value>) -> crate::Result<Built> {
    let grid = cfg.grid()?;
    let base = match cfg.params.base {
        Some([i, j]) if i < grid.nu && j < grid.nv => (i, j),
        Some(b) => return Err(Error::Domain(format!("base {b:?} is outside the {}x{} grid", grid.nu, grid.nv))),
        None => grid.nearest(c(0.0, 0.0)),
    };
    let lg = CircleGrid::unit(cfg.count())?;
    let l0 = cx(cfg.lambda0);
    let res = DelaunayResidue::new(cfg.params.wa, cfg.params.wb)?;
    data.insert("grid".into(), json!({"nu": grid.nu, "nv": grid.nv, "base": [base.0, base.1]}));
    data.insert("count".into(), json!(cfg.count()));

    // underlying surface: frames, closed-form monodromy and translation
    let (frames, chi_closed, q): (FrameField, Box<dyn Fn(C64) -> Mat2 + Sync>, C64) = match cfg.underlying() {
        Example::Vacuum => {
            let q = cx(cfg.params.q);
            let frames = vacuum(&grid, base, lg)?;
            let pts: Vec<C64> = [(0, 0), (grid.nu - 1, 0), (grid.nu / 2, grid.nv / 2), (0, grid.nv - 1), (grid.nu - 1, grid.nv - 1)]
                .iter()
                .map(|(i, j)| grid.point(*i, *j))
                .collect();
            let plg = match cfg.numeric.band {
                Some(b) => CircleGrid::unit((2 * b + 2).max(cfg.count()))?,
                None => lg,
            };
            ledger.check(cfg, "iwasawa", "iwasawa", vacuum_iwasawa_error(&pts, plg, &IwasawaOptions::default())?);
            let chi = move |l: C64| Mat2::a_mat().scale(q / l - q.conj() * l).exp();
            (frames, Box::new(chi), q)
        }
        Example::Delaunay => {
            let d = delaunay(&res, &grid, lg, cfg.h)?;
            data.insert(
                "delaunay".into(),
                json!({
                    "wa": res.wa, "wb": res.wb,
                    "q": [0.0, 2.0 * PI * (res.wa * res.wb).sqrt()],
                    "omega": d.omega, "neck": d.neck, "neck_interior": d.neck_interior,
                }),
            );
            if d.neck_interior {
                ledger.check(cfg, "neck", "neck", d.neck_error());
            }
            (d.frames, Box::new(move |l: C64| res.at(l).scale(c(0.0, 2.0 * PI)).exp()), c(0.0, 2.0 * PI))
        }
        Example::Perturbed => {
            let sp = SingularPotential::off_diagonal_twisted(res, cfg.params.eps);
            let alpha_min = cfg
                .dressing
                .simple_factors
                .first()
                .filter(|_| cfg.example == Example::Bubbleton)
                .map(|r| cx(r.alpha).norm());
            let r_max = cfg.params.r_max.unwrap_or_else(|| alpha_min.map_or(1.0, |a| 0.75 * a));
            let opts = PerturbedOptions {
                n_max: cfg.params.n_max,
                r_max,
                margin: cfg.params.margin,
                count: cfg.count(),
                h: cfg.h,
            };
            let pc = perturbed_cylinder(&sp, &grid, &opts)?;
            data.insert(
                "series".into(),
                json!({
                    "eps": cfg.params.eps, "order": pc.series.order(), "radius": pc.radius.r,
                    "max_cond": pc.series.max_cond,
                }),
            );
            (pc.frames, Box::new(move |l: C64| res.at(l).scale(c(0.0, 2.0 * PI)).exp()), c(0.0, 2.0 * PI))
        }
        Example::Bubbleton => unreachable!("validated"),
    };
    let mono = monodromy(&frames, q, l0)?;
    let want = Loop::from_fn(*mono.chi.grid(), Annulus::punctured(), |l| chi_closed(l));
    if cfg.underlying() == Example::Perturbed {
        // frames normalized at the base point only see the conjugacy class of exp(2 pi i D)
        let tr = mono.chi.samples().iter().zip(want.samples()).fold(0.0f64, |m, (a, b)| m.max((a.a + a.d - b.a - b.d).norm()));
        ledger.check(cfg, "monodromy_trace", "monodromy", tr);
    } else {
        ledger.check(cfg, "monodromy", "monodromy", mono.chi.max_dist(&want) / want.max_abs().max(1.0));
    }
    ledger.closing(cfg, "", &mono);
    let mut frames = frames;
    let mut extra = cfg.dressing.simple_factors.as_slice();

    if cfg.example == Example::Bubbleton {
        let sf = SimpleFactor::from_record(&extra[0])?;
        extra = &extra[1..];
        if cfg.underlying() == Example::Perturbed {
            data.insert("det_condition".into(), serde_json::to_value(det_condition(&res, sf.alpha)).unwrap_or(Value::Null));
        }
        let b = match bubbleton(&frames, &*chi_closed, &sf, q, l0, cfg.h) {
            Err(Error::Residual { name, value, tol }) => {
                ledger.residuals.insert("admissibility".into(), json!(value));
                ledger.tolerances.insert("admissibility".into(), json!(tol));
                ledger.failures.push("admissibility".into());
                return Err(Error::Residual { name, value, tol });
            }
            other => other?,
        };
        ledger.check(cfg, "admissibility", "admissibility", b.admissibility);
        ledger.check(cfg, "conjugation", "conjugation", b.conjugation);
        frames = b.frames;
    }
    let dressed = cfg.example == Example::Bubbleton
        || !extra.is_empty()
        || cfg.dressing.blaschke.is_some()
        || cfg.dressing.flow.is_some();
    for r in extra {
        frames = simple_dress(&SimpleFactor::from_record(r)?, &frames)?;
    }
    if let Some(bc) = &cfg.dressing.blaschke {
        let alphas: Vec<C64> = bc.alphas.iter().map(|a| cx(*a)).collect();
        let rmin = alphas.iter().fold(1.0f64, |m, a| m.min(a.norm()));
        let bd = blaschke_dressing(&alphas, cx(bc.q), CircleGrid::new(0.9 * rmin, cfg.count())?)?;
        data.insert(
            "blaschke".into(),
            json!({
                "spectral": bd.spectral,
                "offenders": bd.offenders.iter().map(|a| [a.re, a.im]).collect::<Vec<_>>(),
            }),
        );
        let d = dress(&bd.h, &frames)?;
        ledger.check(cfg, "blaschke_factor", "dressing", d.factor_residual);
        frames = d.frames;
    }
    if let Some(fc) = &cfg.dressing.flow {
        let phi: Vec<C64> = fc.phi.iter().map(|p| cx(*p)).collect();
        frames = flow(&frames, &phi, fc.t, true)?;
    }
    ledger.check(cfg, "unitarity", "unitarity", frames.unitarity_residual());
    if dressed {
        let mono = monodromy(&frames, q, l0)?;
        ledger.closing(cfg, "dressed_", &mono);
        let mesh = frames_mesh(&frames, cfg)?;
        return Ok(Built { frames, mesh, mono });
    }
    let mesh = frames_mesh(&frames, cfg)?;
    Ok(Built { frames, mesh, mono })
}

fn report_value(
    cfg: Option<&PipelineConfig>,
    seed: u64,
    ledger: Ledger,
    data: Map<String, Value>,
    error: Value,
    outputs: Value,
) -> (Value, i32) {
    let code = match error.get("kind").and_then(Value::as_str) {
        Some("parse") => EXIT_PARSE,
        Some("numeric") => EXIT_NUMERIC,
        Some("residual") => EXIT_RESIDUAL,
        _ if !ledger.failures.is_empty() => EXIT_RESIDUAL,
        _ => EXIT_OK,
    };
    let report = json!({
        "schema": SCHEMA,
        "example": cfg.map(|c| c.example.name()),
        "status": if code == EXIT_OK { "ok" } else { "failed" },
        "seed": seed,
        "residuals": ledger.residuals,
        "tolerances": ledger.tolerances,
        "failures": ledger.failures,
        "data": data,
        "error": error,
        "outputs": outputs,
    });
    (report, code)
}

/// Parse and run the pipeline config at `path`, writing the mesh and report into `out_dir`.
/// The report is written on every outcome; a config that cannot be parsed gets `report.json`.
pub fn run_config(path: &Path, out_dir: &Path, seed: u64) -> RunOutcome {
    let parsed = std::fs::read_to_string(path)
        .map_err(|e| ConfigError { message: format!("reading {}: {e}", path.display()), line: None, column: None })
        .and_then(|t| PipelineConfig::parse(&t));
    let _ = std::fs::create_dir_all(out_dir);
    let cfg = match parsed {
        Ok(c) => c,
        Err(e) => {
            let err = json!({"kind": "parse", "message": e.message, "line": e.line, "column": e.column});
            let (report, code) = report_value(None, seed, Ledger::default(), Map::new(), err, Value::Null);
            let report_path = out_dir.join("report.json");
            let _ = write_report(&report, &report_path);
            return RunOutcome { code, report, report_path };
        }
    };
    let (mesh_name, report_name) = cfg.file_names();
    let mut ledger = Ledger::default();
    let mut data = Map::new();
    let (error, outputs) = match run_example(&cfg, &mut ledger, &mut data) {
        Ok(b) => {
            data.insert("monodromy".into(), b.mono.to_json(None));
            data.insert("vertices".into(), json!(b.mesh.vertices.len()));
            data.insert("faces".into(), json!(b.mesh.faces.len()));
            if cfg.underlying() == Example::Vacuum && cfg.example == Example::Vacuum {
                let (_, d) = axis_fit(&b.mesh.vertices);
                let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
                data.insert("axis_distance".into(), json!({"min": lo, "max": hi}));
            }
            data.insert("frame_unitarity".into(), json!(b.frames.unitarity_residual()));
            match export_mesh(&b.mesh, &out_dir.join(&mesh_name)) {
                Ok(()) => (Value::Null, json!({"mesh": mesh_name, "report": report_name})),
                Err(e) => (json!({"kind": "numeric", "message": e.to_string()}), json!({"report": report_name})),
            }
        }
        Err(e) => {
            let (kind, _) = error_kind(&e);
            let mut err = json!({"kind": kind, "message": e.to_string()});
            if let Error::Residual { name, value, tol } = &e {
                err["name"] = json!(name);
                err["value"] = json!(value);
                err["tol"] = json!(tol);
            }
            (err, json!({"report": report_name}))
        }
    };
    let (report, code) = report_value(Some(&cfg), seed, ledger, data, error, outputs);
    let report_path = out_dir.join(&report_name);
    if let Err(e) = write_report(&report, &report_path) {
        eprintln!("{e}");
        return RunOutcome { code: EXIT_NUMERIC, report, report_path };
    }
    RunOutcome { code, report, report_path }
}

// ---------------------------------------------------------------------------
// verification suites

/// One row of a suite table; `at_least` flips the comparison for negative tests.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub at_least: bool,
}

impl Check {
    pub fn pass(&self) -> bool {
        if self.at_least {
            self.value >= self.bound
        } else {
            self.value <= self.bound
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SuiteResult {
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl SuiteResult {
    fn max(&mut self, suite: &str, name: &str, value: f64, bound: f64) {
        self.checks.push(Check { suite: suite.into(), name: name.into(), value, bound, at_least: false });
    }
    fn min(&mut self, suite: &str, name: &str, value: f64, bound: f64) {
        self.checks.push(Check { suite: suite.into(), name: name.into(), value, bound, at_least: true });
    }
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::pass)
    }
    pub fn table(&self) -> String {
        let mut out = format!("{:<10} {:<34} {:>11}    {:>9}  result\n", "suite", "check", "value", "bound");
        for ch in &self.checks {
            let rel = if ch.at_least { ">=" } else { "<=" };
            let verdict = if ch.pass() { "PASS" } else { "FAIL" };
            out += &format!("{:<10} {:<34} {:>11.3e} {rel} {:>9.1e}  {verdict}\n", ch.suite, ch.name, ch.value, ch.bound);
        }
        for n in &self.notes {
            out += &format!("  {n}\n");
        }
        out
    }
}

fn chi_vacuum(q: C64) -> impl Fn(C64) -> Mat2 + Sync + Copy {
    move |l: C64| Mat2::a_mat().scale(q / l - q.conj() * l).exp()
}

fn suite_iwasawa(out: &mut SuiteResult) -> crate::Result<()> {
    let pts: Vec<C64> = (0..25).map(|k| c(-1.0 + 0.5 * (k % 5) as f64, -1.0 + 0.5 * (k / 5) as f64)).collect();
    let e = vacuum_iwasawa_error(&pts, CircleGrid::unit(256)?, &IwasawaOptions::default())?;
    out.max("iwasawa", "vacuum |F - F_c|, |B - B_c|", e, 1e-8);
    Ok(())
}

fn suite_cylinder(out: &mut SuiteResult) -> crate::Result<()> {
    let n = 64;
    let grid = DomainGrid::rect((-1.0, 1.0), (0.0, PI * (n - 1) as f64 / n as f64), n, n)?;
    let frames = vacuum(&grid, (0, 0), CircleGrid::unit(128)?)?;
    let mesh = sym_bobenko(&frames, c(1.0, 0.0), 0.5)?;
    let (_, d) = axis_fit(&mesh.vertices);
    out.max("cylinder", "max |axis distance - 1|", d.iter().fold(0.0f64, |m, x| m.max((x - 1.0).abs())), 1e-4);
    Ok(())
}

fn suite_delaunay(out: &mut SuiteResult) -> crate::Result<()> {
    let lg = CircleGrid::unit(128)?;
    let grid = DomainGrid::rect((-4.0, 4.0), (0.0, 2.0 * PI), 33, 9)?;
    for (wa, wb) in [(0.3, 0.2), (0.35, 0.15)] {
        let res = DelaunayResidue::new(wa, wb)?;
        let d = delaunay(&res, &grid, lg, 0.5)?;
        let tag = format!("({wa}, {wb})");
        out.notes.push(format!(
            "{tag}: q = {:.9}i, omega = {:.6}, neck = {:.6}",
            2.0 * PI * (wa * wb).sqrt(),
            d.omega,
            d.neck
        ));
        out.max("delaunay", &format!("{tag} closing value"), d.monodromy.closing_value, 1e-9);
        out.max("delaunay", &format!("{tag} closing derivative"), d.monodromy.closing_derivative, 1e-7);
        out.max("delaunay", &format!("{tag} chi - exp(2 pi i D)"), d.monodromy.chi.max_dist(&res.monodromy(lg)), 1e-7);
        out.max("delaunay", &format!("{tag} neck vs omega"), d.neck_error(), 2e-2);
    }
    Ok(())
}

fn suite_dressing(out: &mut SuiteResult, seed: u64) -> crate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = CircleGrid::unit(256)?;
    let mut worst: f64 = 0.0;
    for trial in 0..6 {
        let w = c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        let modulus = if trial % 2 == 0 { 0.5 } else { 0.7 };
        let alpha = C64::from_polar(modulus, rng.gen_range(0.0..2.0 * PI));
        let theta = rng.gen_range(0.0..2.0 * PI);
        for sf in [SimpleFactor::twisted_diagonal(alpha)?, SimpleFactor::twisted_offdiagonal(alpha, theta)?] {
            let closed = simple_dress_loop(&sf, &vacuum_unitary(w, unit))?;
            let inner = CircleGrid::new(0.8 * modulus, 256)?;
            let (numeric, _, _) = dress_loop(&simple_factor(&sf, inner)?, &vacuum_unitary(w, inner))?;
            let numeric = numeric.resample(unit)?;
            // the two paths differ by a diagonal U(1) factor, fixed at lambda = 1
            let (a, b) = (closed.samples()[0], numeric.samples()[0]);
            let p = a.a * b.a.conj() + a.c * b.c.conj();
            let s = a.b * b.b.conj() + a.d * b.d.conj();
            let k = Mat2::diag(p.unscale(p.norm()), s.unscale(s.norm()));
            worst = worst.max(closed.max_dist(&numeric.map(|m| *m * k)));
        }
    }
    out.notes.push(format!("seed = {seed}"));
    out.max("dressing", "closed vs numerical dressing", worst, 1e-6);
    Ok(())
}

fn suite_blaschke(out: &mut SuiteResult) -> crate::Result<()> {
    let q = c(0.0, PI);
    let r = 0.3;
    let set: Vec<C64> = spectral_set(q, r)?.into_iter().filter(|a| a.norm() < 1.0 - 1e-9).collect();
    let conj_with = |alpha: C64| {
        move |l: C64| {
            let a2 = (alpha * alpha - l * l) / (c(1.0, 0.0) - alpha.conj() * alpha.conj() * l * l);
            let x = chi_vacuum(q)(l);
            Mat2::new(x.a, x.b * a2, x.c / a2, x.d)
        }
    };
    let mut unit: f64 = 0.0;
    for a in set.iter().take(4) {
        unit = unit.max(loop_group_membership(conj_with(*a), r, 32, 256)?);
    }
    let off = set.first().map(|a| a + 0.05).ok_or_else(|| Error::Domain("empty spectral set".into()))?;
    out.notes.push(format!("{} spectral points inside the unit disk", set.len()));
    out.max("blaschke", "h chi h^-1 membership (spectral)", unit, 1e-7);
    out.min("blaschke", "h chi h^-1 membership (perturbed)", loop_group_membership(conj_with(off), r, 32, 256)?, 1e-2);
    Ok(())
}

fn suite_parity(out: &mut SuiteResult) -> crate::Result<()> {
    let unit = CircleGrid::unit(256)?;
    let res = DelaunayResidue::new(0.3, 0.2)?;
    let loops = [
        ("chi_c", Loop::from_fn(unit, Annulus::punctured(), chi_vacuum(c(0.0, PI)))),
        ("exp(2 pi i D)", res.monodromy(unit)),
    ];
    for (name, h) in loops {
        let e = eigen_data(&h, Annulus::new(0.5, 2.0))?;
        let prod = e.mu_plus.samples().iter().zip(e.mu_minus.samples()).fold(0.0f64, |m, (a, b)| m.max((a * b - 1.0).norm()));
        out.max("parity", &format!("{name} |mu+ mu- - 1|"), prod, 1e-9);
        out.max("parity", &format!("{name} N mod 2"), e.n.rem_euclid(2) as f64, 0.0);
        out.notes.push(format!("{name}: N = {}", e.n));
    }
    Ok(())
}

fn suite_singular(out: &mut SuiteResult) -> crate::Result<()> {
    let res = DelaunayResidue::new(0.3, 0.2)?;
    let sp = SingularPotential::off_diagonal(res, 0.1);
    let rc = choose_radius(&res, res.winding(), 1.0, 1e-3)?;
    let s = solve_p_series(&sp, 12, CircleGrid::new(rc.r, 128)?)?;
    let (_, mono) = transport_monodromy(&sp, &s, 0.5)?;
    out.notes.push(format!("r = {}, mu = {:.6}", rc.r, rc.mu));
    out.max("singular", "defect at |z| = 1/2", s.defect(&sp, 0.5, 8), 1e-6);
    out.max("singular", "monodromy - exp(2 pi i D)", mono, 1e-6);
    Ok(())
}

fn suite_bubbleton(out: &mut SuiteResult) -> crate::Result<()> {
    let lg = CircleGrid::unit(256)?;
    let grid = DomainGrid::rect((-1.0, 1.0), (0.0, PI), 5, 5)?;
    let base = vacuum(&grid, (2, 0), lg)?;
    let q = c(0.0, PI);
    let chi = chi_vacuum(q);
    let a = (3.0 - 5f64.sqrt()) / 2.0;
    let sf = SimpleFactor::twisted_offdiagonal(c(a, 0.0), 0.7)?;
    let b = bubbleton(&base, &chi, &sf, q, c(1.0, 0.0), 0.5)?;
    out.max("bubbleton", "closing value", b.monodromy.closing_value, 1e-6);
    out.max("bubbleton", "closing derivative", b.monodromy.closing_derivative, 1e-6);
    out.max("bubbleton", "monodromy conjugation", b.conjugation, 1e-6);
    let refused = match bubbleton(&base, &chi, &SimpleFactor::twisted_diagonal(c(0.45, 0.0))?, q, c(1.0, 0.0), 0.5) {
        Err(Error::Residual { value, .. }) => value,
        Err(e) => return Err(e),
        Ok(_) => 0.0,
    };
    out.min("bubbleton", "refusal |chi(alpha) -+ Id|", refused, 0.1);
    Ok(())
}

fn suite_flow(out: &mut SuiteResult) -> crate::Result<()> {
    let lg = CircleGrid::unit(128)?;
    let grid = DomainGrid::rect((-0.5, 0.5), (-0.5, 0.5), 3, 3)?;
    let frames = vacuum(&grid, (1, 1), lg)?;
    let (phi1, t) = (c(0.3, -0.2), 0.7);
    let moved = flow(&frames, &[phi1], t, false)?;
    let mut ident: f64 = 0.0;
    for k in 0..grid.len() {
        let w = grid.point(k % 3, k / 3) + phi1 * t;
        ident = ident.max(moved.unitary[k].max_dist(&vacuum_unitary(w, lg)));
    }
    let phi = [c(0.2, 0.1), c(0.0, 0.05), c(-0.03, 0.02)];
    let ab = flow(&flow(&frames, &phi, 0.4, false)?, &phi, 0.5, false)?;
    let direct = flow(&frames, &phi, 0.9, false)?;
    let add = ab.unitary.iter().zip(&direct.unitary).fold(0.0f64, |m, (a, b)| m.max(a.max_dist(b)));
    out.max("flow", "translation of the vacuum", ident, 1e-8);
    out.max("flow", "additivity in t", add, 1e-8);
    Ok(())
}

fn suite_commuting(out: &mut SuiteResult, seed: u64) -> crate::Result<()> {
    let lg = CircleGrid::unit(256)?;
    let hh = Loop::from_fn(lg, Annulus::punctured(), chi_vacuum(c(0.0, PI)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rec, mut comm, mut skipped) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..5 {
        let p: Vec<C64> = (0..5).map(|_| c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3))).collect();
        let r: Vec<C64> = (0..5).map(|_| c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3))).collect();
        let poly = |cf: &[C64], l: C64| cf.iter().rev().fold(c(0.0, 0.0), |acc, x| acc * l + x);
        let (one, zero) = (c(1.0, 0.0), c(0.0, 0.0));
        let h = Loop::from_fn(lg, Annulus::punctured(), |l| {
            Mat2::new(one, poly(&p, l), zero, one) * Mat2::new(one, zero, poly(&r, l), one)
        });
        match factorize_commuting(&h, &hh, false) {
            Ok(s) => {
                rec = rec.max(s.m.mul(&s.c)?.max_dist(&h) / h.max_abs());
                comm = comm.max(s.commutation);
            }
            Err(Error::Degenerate(_) | Error::IllConditioned(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    out.notes.push(format!("seed = {seed}, skipped = {skipped}"));
    out.max("commuting", "h - M C", rec, 1e-7);
    out.max("commuting", "[C, chi]", comm, 1e-7);
    Ok(())
}

/// Run a named suite (or `all`). Unknown names give `None`.
pub fn run_suite(name: &str, seed: u64) -> Option<(SuiteResult, Option<Error>)> {
    let names: Vec<&str> = if name == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&name) {
        vec![name]
    } else {
        return None;
    };
    let mut out = SuiteResult::default();
    for n in names {
        let r = match n {
            "iwasawa" => suite_iwasawa(&mut out),
            "cylinder" => suite_cylinder(&mut out),
            "delaunay" => suite_delaunay(&mut out),
            "dressing" => suite_dressing(&mut out, seed),
            "blaschke" => suite_blaschke(&mut out),
            "parity" => suite_parity(&mut out),
            "singular" => suite_singular(&mut out),
            "bubbleton" => suite_bubbleton(&mut out),
            "flow" => suite_flow(&mut out),
            _ => suite_commuting(&mut out, seed),
        };
        if let Err(e) = r {
            return Some((out, Some(e)));
        }
    }
    Some((out, None))
}

/// Print the suite table and return the exit code.
pub fn verify(name: &str, seed: u64) -> i32 {
    match run_suite(name, seed) {
        None => {
            eprintln!("unknown suite {name:?}; known: all, {}", SUITES.join(", "));
            EXIT_PARSE
        }
        Some((res, err)) => {
            print!("{}", res.table());
            if let Some(e) = err {
                eprintln!("{e}");
                return EXIT_NUMERIC;
            }
            if res.passed() {
                EXIT_OK
            } else {
                EXIT_RESIDUAL
            }
        }
    }
}
