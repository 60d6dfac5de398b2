//! Scenario files, the run orchestration behind `eqm`, manifests and run comparison.
//!
//! A scenario is a JSON object with a `kind` and one section per module:
//!
//! ```json
//! {
//!   "kind": "equilibrium",
//!   "seed": 7,
//!   "output": "runs/dirac1d",
//!   "equilibrium": {
//!     "grid": { "type": "nodes", "lower": [-2.0], "upper": [2.0], "shape": [401] },
//!     "reference": { "type": "dirac", "point": [0.0] }
//!   }
//! }
//! ```
//!
//! Unknown keys are rejected. Relative input paths resolve against the
//! scenario file; a missing `output` becomes `$EQM_OUTPUT_ROOT/<file stem>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::diagnostics::{diagnose, DiagnosticsConfig, Flag};
use crate::error::{Error, Result};
use crate::flow::{dissipation_check, Flow, FlowConfig};
use crate::kernel::{kernel_eval, KernelKind, KernelSpec};
use crate::loggas::{
    histogram_compare, one_d_relation_check, sample_gas, semicircle_printed_mass, GasConfig, KappaReading,
};
use crate::measure::{Ball, DiscreteMeasure, GridDensity, GridSpec};
use crate::solver::{confinement_loop, minimize, minimize_from, EquilibriumResult, SolverConfig};
use crate::transport::{kantorovich_potential, solve_exact, wasserstein_d2};

pub const OUTPUT_ROOT_VAR: &str = "EQM_OUTPUT_ROOT";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Equilibrium,
    Flow,
    Gas,
    Diagnostics,
    Selftest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridInput {
    /// `n` cells per axis tiling `[-half_width, half_width]^dim`.
    Cube { dim: usize, half_width: f64, n: usize },
    /// Cell centers on a lattice whose first and last centers are `lower` and `upper`.
    Nodes { lower: Vec<f64>, upper: Vec<f64>, shape: Vec<usize> },
}

impl GridInput {
    pub fn build(&self) -> Result<GridSpec> {
        match self {
            GridInput::Cube { dim, half_width, n } => GridSpec::centered_cube(*dim, *half_width, *n),
            GridInput::Nodes { lower, upper, shape } => {
                if lower.len() != upper.len() || lower.len() != shape.len() {
                    return Err(Error::InvalidGrid("lower, upper and shape lengths differ".into()));
                }
                if shape.iter().any(|&n| n < 2) {
                    return Err(Error::InvalidGrid("nodes grids need two points per axis".into()));
                }
                let spacing: Vec<f64> =
                    (0..shape.len()).map(|k| (upper[k] - lower[k]) / (shape[k] - 1) as f64).collect();
                let origin = (0..shape.len()).map(|k| lower[k] - 0.5 * spacing[k]).collect();
                GridSpec::new(origin, spacing, shape.clone())
            }
        }
    }

    fn with_n(&self, n: usize) -> Option<GridInput> {
        match self {
            GridInput::Cube { dim, half_width, .. } => Some(GridInput::Cube { dim: *dim, half_width: *half_width, n }),
            GridInput::Nodes { .. } => None,
        }
    }
}

/// A density on the run grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityInput {
    UniformBall {
        center: Vec<f64>,
        radius: f64,
    },
    Gaussian {
        center: Vec<f64>,
        sigma: f64,
    },
    /// A grid density written by `GridDensity::write`, given by its stem.
    File {
        stem: PathBuf,
    },
}

impl DensityInput {
    fn build(&self, spec: &GridSpec, base: &Path) -> Result<GridDensity> {
        match self {
            DensityInput::UniformBall { center, radius } => {
                GridDensity::uniform_ball(spec.clone(), &Ball::new(center.clone(), *radius)?)
            }
            DensityInput::Gaussian { center, sigma } => {
                if !(*sigma > 0.0) {
                    return Err(Error::InvalidParameter("sigma must be positive".into()));
                }
                let c = center.clone();
                let s2 = 2.0 * sigma * sigma;
                GridDensity::from_fn(spec.clone(), move |x| {
                    (-x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s2).exp()
                })?
                .normalized()
            }
            DensityInput::File { stem } => {
                let p = resolve(base, stem);
                GridDensity::read(&p)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceInput {
    Dirac {
        point: Vec<f64>,
    },
    /// A density discretized on the solver grid with `refine` atoms per cell axis.
    Density {
        density: DensityInput,
        #[serde(default = "one")]
        refine: usize,
    },
    /// A weights CSV as written by `DiscreteMeasure::write_csv`.
    File {
        path: PathBuf,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumSection {
    pub grid: GridInput,
    pub reference: ReferenceInput,
    /// Defaults to the log kernel in 1D/2D and the Newton kernel in 3D.
    #[serde(default)]
    pub kernel: Option<KernelKind>,
    #[serde(default = "EquilibriumSection::default_scale")]
    pub interaction_scale: f64,
    #[serde(default = "EquilibriumSection::default_tol_el")]
    pub tol_el: f64,
    #[serde(default = "EquilibriumSection::default_tol_gap")]
    pub tol_gap: f64,
    #[serde(default = "EquilibriumSection::default_outer")]
    pub max_outer_iters: usize,
    #[serde(default = "EquilibriumSection::default_inner")]
    pub max_inner_iters: usize,
    #[serde(default)]
    pub window: Option<usize>,
    #[serde(default = "EquilibriumSection::default_delta_supp")]
    pub delta_supp: f64,
    /// Confinement radii tried in turn; empty for a plain solve.
    #[serde(default)]
    pub confinement_radii: Vec<f64>,
    /// Coarser cells-per-axis counts solved first, each warm-starting the next (cube grids).
    #[serde(default)]
    pub warm_levels: Vec<usize>,
}

impl EquilibriumSection {
    fn default_scale() -> f64 {
        1.0
    }
    fn default_tol_el() -> f64 {
        1e-6
    }
    fn default_tol_gap() -> f64 {
        1e-12
    }
    fn default_outer() -> usize {
        30
    }
    fn default_inner() -> usize {
        20_000
    }
    fn default_delta_supp() -> f64 {
        2.0
    }

    fn solver_config(&self, grid: GridSpec, seed: u64) -> SolverConfig {
        let mut cfg = SolverConfig::new(grid);
        if let Some(k) = self.kernel {
            cfg.kernel = k;
        }
        cfg.interaction_scale = self.interaction_scale;
        cfg.tol_el = self.tol_el;
        cfg.tol_gap = self.tol_gap;
        cfg.max_outer_iters = self.max_outer_iters;
        cfg.max_inner_iters = self.max_inner_iters;
        cfg.window = self.window;
        cfg.delta_supp = self.delta_supp;
        cfg.confinement_radius_schedule = self.confinement_radii.clone();
        cfg.rng_seed = seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub tol: f64,
    pub omega_radii: Vec<f64>,
    pub omega_centers: usize,
    /// Threshold on the median product-form Monge–Ampère residual.
    pub ma_threshold: f64,
    /// Threshold on the 1D relation 2U + x²/2 = λ.
    pub relation_tol: f64,
    /// The transport-map residual may not exceed this many cell widths.
    pub map_cells: f64,
    /// Probe pairs for the monotonicity check.
    pub monotonicity_pairs: usize,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        let d = DiagnosticsConfig::default();
        DiagnosticsSection {
            tol: d.tol,
            omega_radii: d.omega_radii,
            omega_centers: d.omega_centers,
            ma_threshold: 0.1,
            relation_tol: 1e-3,
            map_cells: 5.0,
            monotonicity_pairs: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub grid: GridInput,
    pub initial: DensityInput,
    #[serde(default)]
    pub kernel: Option<KernelKind>,
    #[serde(default = "FlowSection::default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "FlowSection::default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub snapshot_every: usize,
    #[serde(default = "FlowSection::default_mismatch")]
    pub mismatch_tol: f64,
    #[serde(default = "FlowSection::default_mass")]
    pub mass_tol: f64,
}

impl FlowSection {
    fn default_tau() -> f64 {
        1.0
    }
    fn default_steps() -> usize {
        200
    }
    fn default_mismatch() -> f64 {
        0.1
    }
    fn default_mass() -> f64 {
        1e-10
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GasSection {
    pub n: usize,
    pub g: f64,
    pub steps: usize,
    pub burn_in: usize,
    pub proposal_scale: f64,
    pub kappa: KappaReading,
    pub ks_threshold: f64,
    pub radius_tol: f64,
}

impl Default for GasSection {
    fn default() -> Self {
        GasSection {
            n: 64,
            g: 2.0,
            steps: 2000,
            burn_in: 500,
            proposal_scale: 0.1,
            kappa: KappaReading::Calibrated,
            ks_threshold: 0.05,
            radius_tol: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub equilibrium: Option<EquilibriumSection>,
    #[serde(default)]
    pub diagnostics: Option<DiagnosticsSection>,
    #[serde(default)]
    pub flow: Option<FlowSection>,
    #[serde(default)]
    pub gas: Option<GasSection>,
}

impl Scenario {
    /// Parses scenario JSON; errors name the offending key.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::ConfigParse { key: e.path().to_string(), message: e.inner().to_string() })?;
        s.check_sections()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| missing_or(e.into(), path))?;
        Self::parse(&text)
    }

    fn check_sections(&self) -> Result<()> {
        let need = |present: bool, key: &str| {
            if present {
                Ok(())
            } else {
                Err(Error::ConfigParse { key: key.into(), message: format!("required for kind {:?}", self.kind) })
            }
        };
        match self.kind {
            ScenarioKind::Equilibrium | ScenarioKind::Diagnostics => need(self.equilibrium.is_some(), "equilibrium"),
            ScenarioKind::Flow => need(self.flow.is_some(), "flow"),
            ScenarioKind::Gas => need(self.gas.is_some(), "gas"),
            ScenarioKind::Selftest => Ok(()),
        }
    }

    /// SHA-256 of the canonical serialization.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("scenario serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn output_dir(&self, scenario_path: Option<&Path>) -> PathBuf {
        match &self.output {
            Some(p) => p.clone(),
            None => {
                let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| "runs".into());
                let stem = scenario_path
                    .and_then(|p| p.file_stem())
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("{:?}", self.kind).to_lowercase());
                root.join(stem)
            }
        }
    }
}

/// A named sub-stream of the scenario seed.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::MissingInput(p.to_path_buf()))
    }
}

fn missing_or(e: Error, p: &Path) -> Error {
    match e {
        Error::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingInput(p.to_path_buf()),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub config_hash: String,
    pub scenario: Scenario,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Headline numbers used by `compare`.
    pub summary: BTreeMap<String, f64>,
    pub passed: bool,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST);
        if !p.is_file() {
            return Err(Error::ManifestMissing(dir.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(p)?)?)
    }
}

fn sha256_file(p: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(p)?)))
}

fn list_files(dir: &Path, prefix: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let rel = prefix.join(e.file_name());
        if e.file_type()?.is_dir() {
            list_files(&e.path(), &rel, out)?;
        } else if rel != Path::new(MANIFEST) {
            out.push(rel);
        }
    }
    Ok(())
}

/// Result of [`run_scenario`].
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub passed: bool,
    pub flags: Vec<Flag>,
}

impl Outcome {
    pub fn exit_code(&self) -> u8 {
        if self.passed {
            0
        } else {
            2
        }
    }
}

struct Run {
    flags: Vec<Flag>,
    summary: BTreeMap<String, f64>,
    inputs: Vec<PathBuf>,
}

impl Run {
    fn new() -> Self {
        Run { flags: Vec::new(), summary: BTreeMap::new(), inputs: Vec::new() }
    }
    fn flag(&mut self, name: &str, pass: bool, detail: String) {
        self.flags.push(Flag::new(name, pass, detail));
    }
}

/// Runs a scenario file, writing outputs and manifest.json.
pub fn run_file(path: &Path) -> Result<Outcome> {
    let s = Scenario::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    run_scenario(&s, &base, &s.output_dir(Some(path)))
}

/// Runs a parsed scenario; relative inputs resolve against `base`.
pub fn run_scenario(s: &Scenario, base: &Path, dir: &Path) -> Result<Outcome> {
    let start = Instant::now();
    fs::create_dir_all(dir).map_err(|e| Error::from(e).context(format!("output directory {}", dir.display())))?;
    let mut run = Run::new();
    match s.kind {
        ScenarioKind::Equilibrium => {
            equilibrium(s, base, dir, &mut run, false).map_err(|e| e.context("equilibrium"))?;
        }
        ScenarioKind::Diagnostics => {
            equilibrium(s, base, dir, &mut run, true).map_err(|e| e.context("diagnostics"))?;
        }
        ScenarioKind::Flow => flow(s, base, dir, &mut run).map_err(|e| e.context("flow"))?,
        ScenarioKind::Gas => gas(s, dir, &mut run).map_err(|e| e.context("gas"))?,
        ScenarioKind::Selftest => {
            run.flags = selftest()?;
            fs::write(dir.join("selftest.json"), serde_json::to_string_pretty(&run.flags)?)?;
        }
    }
    let passed = run.flags.iter().all(|f| f.pass);

    let mut outputs = Vec::new();
    let mut files = Vec::new();
    list_files(dir, Path::new(""), &mut files)?;
    for f in files {
        outputs.push(FileDigest { path: f.to_string_lossy().into_owned(), sha256: sha256_file(&dir.join(&f))? });
    }
    let inputs = run
        .inputs
        .iter()
        .map(|p| Ok(FileDigest { path: p.to_string_lossy().into_owned(), sha256: sha256_file(p)? }))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        kind: s.kind,
        seed: s.seed,
        config_hash: s.config_hash(),
        scenario: s.clone(),
        inputs,
        outputs,
        summary: run.summary,
        passed,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(Outcome { dir: dir.to_path_buf(), passed, flags: run.flags })
}

fn reference_measure(
    sec: &EquilibriumSection,
    grid: &GridSpec,
    base: &Path,
    run: &mut Run,
) -> Result<(DiscreteMeasure, Option<GridDensity>)> {
    match &sec.reference {
        ReferenceInput::Dirac { point } => Ok((DiscreteMeasure::dirac(point)?, None)),
        ReferenceInput::Density { density, refine } => {
            if let DensityInput::File { stem } = density {
                let p = resolve(base, stem);
                run.inputs.extend([p.with_extension("json"), p.with_extension("csv")]);
            }
            let g = density.build(grid, base)?;
            Ok((g.to_discrete_refined(*refine)?, Some(g)))
        }
        ReferenceInput::File { path } => {
            let p = resolve(base, path);
            require(&p)?;
            let m = DiscreteMeasure::read_csv(&p).map_err(|e| missing_or(e, &p))?;
            run.inputs.push(p);
            Ok((m, None))
        }
    }
}

fn solve_section(
    sec: &EquilibriumSection,
    seed: u64,
    base: &Path,
    run: &mut Run,
) -> Result<(EquilibriumResult, Option<GridDensity>)> {
    let grid = sec.grid.build()?;
    let (rho0, rho0_grid) = reference_measure(sec, &grid, base, run)?;
    let cfg = sec.solver_config(grid, seed);
    if !sec.confinement_radii.is_empty() {
        return Ok((confinement_loop(&rho0, &cfg)?, rho0_grid));
    }
    let mut prev: Option<EquilibriumResult> = None;
    for &n in &sec.warm_levels {
        let coarse_in = sec.grid.with_n(n).ok_or_else(|| Error::ConfigParse {
            key: "equilibrium.warm_levels".into(),
            message: "needs a cube grid".into(),
        })?;
        let coarse_grid = coarse_in.build()?;
        let (coarse_rho0, _) = reference_measure(sec, &coarse_grid, base, run)?;
        let ccfg = sec.solver_config(coarse_grid, seed);
        prev = Some(minimize_from(&coarse_rho0, &ccfg, prev.as_ref())?);
    }
    let res = match prev {
        Some(p) => minimize_from(&rho0, &cfg, Some(&p))?,
        None => minimize(&rho0, &cfg)?,
    };
    Ok((res, rho0_grid))
}

fn equilibrium(s: &Scenario, base: &Path, dir: &Path, run: &mut Run, full: bool) -> Result<()> {
    let sec = s.equilibrium.as_ref().expect("checked at parse");
    let (res, rho0_grid) = solve_section(sec, substream(s.seed, "solver"), base, run)?;
    res.write_run_dir(dir)?;
    run.summary.insert("energy_total".into(), res.energy.total);
    run.summary.insert("energy_interaction".into(), res.energy.interaction);
    run.summary.insert("energy_transport".into(), res.energy.transport);
    run.summary.insert("lambda_hat".into(), res.lambda_hat);
    run.summary.insert("el_support_max_dev".into(), res.el_report.support_max_dev);
    run.summary.insert("spacing".into(), res.spacing());
    run.flag("converged", res.converged, format!("{} iterations", res.iterations));
    if !full {
        return Ok(());
    }

    let dcfg_in = s.diagnostics.clone().unwrap_or_default();
    let dcfg = DiagnosticsConfig {
        tol: dcfg_in.tol,
        omega_radii: dcfg_in.omega_radii.clone(),
        omega_centers: dcfg_in.omega_centers,
    };
    let candidates: Vec<Vec<f64>> = res.measure.points().map(<[f64]>::to_vec).collect();
    let origin = vec![0.0; res.grid.dim()];
    let psi = kantorovich_potential(&res.plan, &candidates, &origin).ok();
    let report = diagnose(&res, psi.as_ref(), rho0_grid.as_ref(), &dcfg)?;
    report.write(dir)?;
    if let Some(c) = report.complementarity_max {
        run.summary.insert("complementarity_max".into(), c);
    }
    run.summary.insert("map_residual_max".into(), report.map_residual_max);
    if let Some(ma) = &report.monge_ampere {
        run.summary.insert("ma_product_residual".into(), ma.product.median);
        run.summary.insert("ma_ratio_residual".into(), ma.ratio.median);
        run.summary.insert("ma_shifted_residual".into(), ma.shifted.median);
        run.flag(
            "monge_ampere",
            ma.product.median <= dcfg_in.ma_threshold,
            format!("median {:.3e} over {} cells", ma.product.median, ma.product.count),
        );
    }
    run.flags.extend(report.flags.iter().cloned());
    let h = res.spacing();
    run.flag(
        "transport_map",
        report.map_residual_max <= dcfg_in.map_cells * h,
        format!("{:.3e} vs {} h", report.map_residual_max, dcfg_in.map_cells),
    );

    if res.grid.dim() == 1 {
        if let Ok(rel) = one_d_relation_check(&res, dcfg_in.tol) {
            run.summary.insert("relation_max_deviation".into(), rel.max_deviation);
            run.flag("relation", rel.max_deviation <= dcfg_in.relation_tol, format!("{:.3e}", rel.max_deviation));
            fs::write(dir.join("relation.json"), serde_json::to_string_pretty(&rel)?)?;
        }
    }
    if dcfg_in.monotonicity_pairs > 0 {
        let mono =
            crate::solver::el_residual(&res, &candidates, dcfg_in.monotonicity_pairs, substream(s.seed, "probes"))?;
        run.summary.insert("monotonicity_min".into(), mono.min_value);
        run.flag("monotonicity", mono.min_value >= -dcfg_in.tol, format!("min {:.3e}", mono.min_value));
        fs::write(dir.join("monotonicity.json"), serde_json::to_string_pretty(&mono)?)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FlowReport {
    mass_initial: f64,
    mass_final: f64,
    mass_drift: f64,
    energy_initial: f64,
    energy_final: f64,
    max_mismatch: f64,
    max_increase: f64,
    nonincreasing: bool,
    steps: usize,
    time: f64,
}

fn flow(s: &Scenario, base: &Path, dir: &Path, run: &mut Run) -> Result<()> {
    let sec = s.flow.as_ref().expect("checked at parse");
    let grid = sec.grid.build()?;
    if let DensityInput::File { stem } = &sec.initial {
        let p = resolve(base, stem);
        run.inputs.extend([p.with_extension("json"), p.with_extension("csv")]);
    }
    let rho = sec.initial.build(&grid, base)?;
    let kernel = sec.kernel.unwrap_or(if grid.dim() == 3 { KernelKind::Riesz(3) } else { KernelKind::Log2D });
    let cfg = FlowConfig { kernel, dt: sec.dt, tau: sec.tau, steps: sec.steps, snapshot_every: sec.snapshot_every };
    let flow = Flow::new(&rho, cfg)?;
    let m0 = rho.mass();
    let state = flow.run(rho, Some(dir))?;
    let diss = dissipation_check(&state)?;
    let m1 = state.density.mass();
    let rep = FlowReport {
        mass_initial: m0,
        mass_final: m1,
        mass_drift: (m1 - m0).abs(),
        energy_initial: state.energy_history[0].1,
        energy_final: state.energy_history.last().unwrap().1,
        max_mismatch: diss.max_mismatch,
        max_increase: diss.max_increase,
        nonincreasing: diss.nonincreasing,
        steps: state.step_count,
        time: state.time,
    };
    fs::write(dir.join("flow_report.json"), serde_json::to_string_pretty(&rep)?)?;
    state.density.write(&dir.join("density_final"))?;
    run.summary.insert("mass_drift".into(), rep.mass_drift);
    run.summary.insert("energy_final".into(), rep.energy_final);
    run.summary.insert("dissipation_mismatch".into(), rep.max_mismatch);
    run.summary.insert("spacing".into(), grid.spacing[0]);
    run.flag("mass", rep.mass_drift <= sec.mass_tol, format!("{:.3e}", rep.mass_drift));
    run.flag("energy_nonincreasing", rep.nonincreasing, format!("max increase {:.3e}", rep.max_increase));
    run.flag("dissipation", rep.max_mismatch <= sec.mismatch_tol, format!("{:.4}", rep.max_mismatch));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GasReport {
    ks: f64,
    count: usize,
    radius: f64,
    target_radius: f64,
    acceptance_rate: f64,
    proposal_scale: f64,
    kappa: f64,
    g_eff: f64,
}

fn gas(s: &Scenario, dir: &Path, run: &mut Run) -> Result<()> {
    let sec = s.gas.as_ref().expect("checked at parse");
    let cfg = GasConfig {
        n: sec.n,
        g: sec.g,
        steps: sec.steps,
        burn_in: sec.burn_in,
        proposal_scale: sec.proposal_scale,
        rng_seed: substream(s.seed, "gas"),
        kappa: sec.kappa,
    };
    let samples = sample_gas(&cfg)?;
    samples.write_csv(&dir.join("samples.csv"))?;
    let ks = histogram_compare(&samples, sec.g)?;
    let rep = GasReport {
        ks: ks.ks,
        count: ks.count,
        radius: samples.radius_estimate(),
        target_radius: cfg.target_radius(),
        acceptance_rate: samples.acceptance_rate,
        proposal_scale: samples.proposal_scale,
        kappa: samples.kappa,
        g_eff: samples.g_eff,
    };
    fs::write(dir.join("gas_report.json"), serde_json::to_string_pretty(&rep)?)?;
    run.summary.insert("ks".into(), rep.ks);
    run.summary.insert("radius".into(), rep.radius);
    run.summary.insert("g_eff".into(), rep.g_eff);
    run.flag("ks", rep.ks <= sec.ks_threshold, format!("{:.4}", rep.ks));
    let rel = (rep.radius - rep.target_radius).abs() / rep.target_radius;
    run.flag("radius", rel <= sec.radius_tol, format!("relative error {rel:.4}"));
    run.flag("acceptance", !samples.flagged, format!("{:.3}", rep.acceptance_rate));
    Ok(())
}

/// Quick checks with closed-form answers.
pub fn selftest() -> Result<Vec<Flag>> {
    let mut flags = Vec::new();
    let close = |a: f64, b: f64, tol: f64| (a - b).abs() <= tol;

    let k = kernel_eval(&KernelSpec::log2d(), 1.0)?;
    flags.push(Flag::new("log kernel at 1", k == 0.0, format!("{k}")));
    let k = kernel_eval(&KernelSpec::riesz(3)?, 2.0)?;
    flags.push(Flag::new("Newton kernel at 2", close(k, 0.5, 1e-15), format!("{k}")));

    let a = DiscreteMeasure::dirac(&[0.0, 0.0])?;
    let b = DiscreteMeasure::dirac(&[3.0, 4.0])?;
    let d2 = wasserstein_d2(&a, &b)?;
    flags.push(Flag::new("d2 between Diracs", close(d2, 12.5, 1e-12), format!("{d2}")));
    let mu = DiscreteMeasure::uniform(&[vec![0.0], vec![1.0]])?;
    let nu = DiscreteMeasure::uniform(&[vec![0.5], vec![1.5]])?;
    let plan = solve_exact(&mu, &nu)?;
    flags.push(Flag::new("shift plan cost", close(plan.cost, 0.125, 1e-12), format!("{}", plan.cost)));

    let m = semicircle_printed_mass(2.0);
    flags.push(Flag::new("printed semicircle mass at g = 2", close(m, 0.25, 1e-8), format!("{m}")));

    let h = 0.1;
    let spec = GridSpec::new(vec![-2.0 - 0.5 * h], vec![h], vec![41])?;
    let mut cfg = SolverConfig::new(spec);
    cfg.interaction_scale = 0.0;
    let res = minimize(&DiscreteMeasure::dirac(&[0.0])?, &cfg)?;
    let w = res.weights()[20];
    flags.push(Flag::new("no interaction returns the reference", close(w, 1.0, 1e-12), format!("{w}")));

    let spec = GridSpec::centered_cube(2, 1.0, 8)?;
    let rho = GridDensity::from_fn(spec, |_| 1.0)?.normalized()?;
    let flow = Flow::new(&rho, FlowConfig { steps: 1, ..FlowConfig::default() })?;
    let (after, _, _) = flow.advect(&rho, &vec![0.3; rho.cells().len()])?;
    let moved = after.cells().iter().zip(rho.cells()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    flags.push(Flag::new("constant potential moves nothing", moved == 0.0, format!("{moved}")));
    Ok(flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub file: String,
    pub key: String,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub identical: Vec<String>,
    pub differing: Vec<String>,
    pub only_in_one: Vec<String>,
    /// Numeric differences above tolerance in summaries and JSON outputs.
    pub drifts: Vec<Drift>,
    /// b/a for residual summaries when the grids differ.
    pub refinement_ratios: BTreeMap<String, f64>,
    pub tolerance: f64,
    pub flagged: bool,
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, f64>) {
    match v {
        Value::Number(n) => {
            if let Some(x) = n.as_f64() {
                out.insert(prefix.to_string(), x);
            }
        }
        Value::Object(m) => {
            for (k, v) in m {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        Value::Array(a) => {
            for (i, v) in a.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), v, out);
            }
        }
        _ => {}
    }
}

fn drifted(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() > tol * (1.0 + a.abs().max(b.abs()))
}

/// Diffs two run directories. Drift above `tol` (relative) is flagged unless
/// the grids differ, in which case residual refinement ratios are reported.
pub fn compare_runs(dir_a: &Path, dir_b: &Path, tol: f64) -> Result<CompareReport> {
    let ma = Manifest::read(dir_a)?;
    let mb = Manifest::read(dir_b)?;
    let hashes =
        |m: &Manifest| m.outputs.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect::<BTreeMap<_, _>>();
    let (ha, hb) = (hashes(&ma), hashes(&mb));
    let mut rep = CompareReport {
        identical: Vec::new(),
        differing: Vec::new(),
        only_in_one: Vec::new(),
        drifts: Vec::new(),
        refinement_ratios: BTreeMap::new(),
        tolerance: tol,
        flagged: false,
    };
    for (path, h) in &ha {
        match hb.get(path) {
            Some(g) if g == h => rep.identical.push(path.clone()),
            Some(_) => rep.differing.push(path.clone()),
            None => rep.only_in_one.push(path.clone()),
        }
    }
    rep.only_in_one.extend(hb.keys().filter(|p| !ha.contains_key(*p)).cloned());

    let same_grid = ma.summary.get("spacing") == mb.summary.get("spacing");
    if same_grid {
        for (k, a) in &ma.summary {
            if let Some(&b) = mb.summary.get(k) {
                if drifted(*a, b, tol) {
                    rep.drifts.push(Drift { file: MANIFEST.into(), key: k.clone(), a: *a, b });
                }
            }
        }
        for path in rep.differing.iter().filter(|p| p.ends_with(".json")) {
            let read = |d: &Path| -> Result<BTreeMap<String, f64>> {
                let v: Value = serde_json::from_str(&fs::read_to_string(d.join(path))?)?;
                let mut out = BTreeMap::new();
                flatten("", &v, &mut out);
                Ok(out)
            };
            let (fa, fb) = (read(dir_a)?, read(dir_b)?);
            for (k, a) in &fa {
                if let Some(&b) = fb.get(k) {
                    if drifted(*a, b, tol) {
                        rep.drifts.push(Drift { file: path.clone(), key: k.clone(), a: *a, b });
                    }
                }
            }
        }
        rep.flagged = !rep.drifts.is_empty() || !rep.only_in_one.is_empty();
    } else {
        for (k, a) in &ma.summary {
            if k.contains("residual") || k.contains("max_dev") || k.contains("mismatch") {
                if let Some(&b) = mb.summary.get(k) {
                    if *a != 0.0 {
                        rep.refinement_ratios.insert(k.clone(), b / a);
                    }
                }
            }
        }
    }
    Ok(rep)
}
