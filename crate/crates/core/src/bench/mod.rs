//! Experiment driver: reconstruction methods, error metrics, grid search,
//! electrode ablation and report files.

mod config;
mod report;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageContext};
use crate::fem::{SpaceTimeWeights, SurfaceGeometry};
use crate::field::SpaceTimeField;
use crate::mesh::{extract_boundary_sets, generate_torso_2d, place_electrodes, BoundarySets, ElectrodeSet, GeometryConfig, Placement, TorsoModel};
use crate::prox::{pdhg_solve, solver_norm, InverseProblem, PdhgParams, SolveTrace, Termination};
use crate::sim::{add_noise, simulate, ConductivityTable, GroundTruth, NoisyData, SimConfig};
use crate::tikhonov::{solve_t0, solve_t1s, solve_t1st};
use crate::transfer::TransferMatrix;
use crate::tv::{Anisotropy, GradOp, GradientSpace};

pub use config::{ExperimentConfig, GridConfig};
pub use report::{heatmap_ppm, metrics_csv, MetricsRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    T0,
    T1S,
    T1ST,
    TVS1,
    TVS2,
    TVST1,
    TVST2,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::T0,
        Method::T1S,
        Method::T1ST,
        Method::TVS1,
        Method::TVS2,
        Method::TVST1,
        Method::TVST2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::T0 => "T0",
            Method::T1S => "T1S",
            Method::T1ST => "T1ST",
            Method::TVS1 => "TVS1",
            Method::TVS2 => "TVS2",
            Method::TVST1 => "TVST1",
            Method::TVST2 => "TVST2",
        }
    }

    /// Whether `λ_t` enters the method.
    pub fn is_temporal(self) -> bool {
        matches!(self, Method::T1ST | Method::TVST1 | Method::TVST2)
    }

    pub fn gradient_space(self) -> Option<GradientSpace> {
        match self {
            Method::TVS1 | Method::TVST1 => Some(GradientSpace::Q1),
            Method::TVS2 | Method::TVST2 => Some(GradientSpace::Q2),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{s}`; expected one of T0, T1S, T1ST, TVS1, TVS2, TVST1, TVST2"
                ))
            })
    }
}

/// `(λ_γ, λ_t)`; `λ_t` is zero for methods without temporal regularization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambda {
    pub gamma: f64,
    pub t: f64,
}

impl Lambda {
    pub fn new(gamma: f64, t: f64) -> Self {
        Self { gamma, t }
    }

    /// The values actually used by `method`.
    pub fn for_method(self, method: Method) -> Self {
        if method.is_temporal() {
            self
        } else {
            Self { gamma: self.gamma, t: 0.0 }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub re: f64,
    pub cc: f64,
    pub vh: f64,
}

fn check_len(u: &SpaceTimeField, ug: &SpaceTimeField) -> Result<()> {
    if u.n_space() != ug.n_space() || u.n_time() != ug.n_time() {
        return Err(Error::dim("metric input", ug.len(), u.len()));
    }
    Ok(())
}

/// `‖u − u^g‖₂ / ‖u^g‖₂` on nodal values.
pub fn metric_re(u: &SpaceTimeField, ug: &SpaceTimeField) -> Result<f64> {
    check_len(u, ug)?;
    let den = ug.norm2();
    if den == 0.0 {
        return Err(Error::Undefined("relative error against a zero truth".into()));
    }
    let num = u.as_slice().iter().zip(ug.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / den)
}

/// Pearson correlation of the nodal vectors. A constant reconstruction has no
/// correlation with the truth and scores 0.
pub fn metric_cc(u: &SpaceTimeField, ug: &SpaceTimeField) -> Result<f64> {
    check_len(u, ug)?;
    let n = u.len() as f64;
    let mean = |x: &[f64]| x.iter().sum::<f64>() / n;
    let (mu, mg) = (mean(u.as_slice()), mean(ug.as_slice()));
    let (mut sug, mut suu, mut sgg) = (0.0, 0.0, 0.0);
    for (a, b) in u.as_slice().iter().zip(ug.as_slice()) {
        let (da, db) = (a - mu, b - mg);
        sug += da * db;
        suu += da * da;
        sgg += db * db;
    }
    if sgg == 0.0 {
        return Err(Error::Undefined("correlation with a constant truth".into()));
    }
    if suu == 0.0 {
        return Ok(0.0);
    }
    Ok((sug / (suu.sqrt() * sgg.sqrt())).clamp(-1.0, 1.0))
}

/// `√((u − u^g)ᵀ (D̃ ⊗ M̃) (u − u^g))` with the time-major nodal weights.
pub fn metric_vh(u: &SpaceTimeField, ug: &SpaceTimeField, nodal_weights: &[f64]) -> Result<f64> {
    check_len(u, ug)?;
    if nodal_weights.len() != u.len() {
        return Err(Error::dim("space-time weights", u.len(), nodal_weights.len()));
    }
    Ok(u.as_slice()
        .iter()
        .zip(ug.as_slice())
        .zip(nodal_weights)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

pub fn metrics(u: &SpaceTimeField, ug: &SpaceTimeField, nodal_weights: &[f64]) -> Result<Metrics> {
    Ok(Metrics {
        re: metric_re(u, ug)?,
        cc: metric_cc(u, ug)?,
        vh: metric_vh(u, ug, nodal_weights)?,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::dim("rank correlation samples", x.len(), y.len()));
    }
    let ranks = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = 0.5 * (i + j) as f64 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("rank correlation of a constant sample".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// PDHG settings shared by all TV reconstructions of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub eps_tv: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 100_000,
            seed: 0,
            eps_tv: 0.0,
        }
    }
}

/// Mesh, operators and simulated truth for one electrode layout.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub model: TorsoModel,
    pub bounds: BoundarySets,
    pub electrodes: ElectrodeSet,
    pub surface: SurfaceGeometry,
    pub weights: SpaceTimeWeights,
    pub transfer: TransferMatrix,
    pub truth: GroundTruth,
    /// Time-major `D̃ ⊗ M̃` diagonal.
    pub nodal_weights: Vec<f64>,
    /// Seconds spent building the torso operators.
    pub build_seconds: f64,
}

impl Scenario {
    pub fn build(
        geometry: &GeometryConfig,
        sim: &SimConfig,
        table: &ConductivityTable,
        n_electrodes: usize,
        placement: Placement,
        electrode_seed: u64,
    ) -> Result<Self> {
        let model = generate_torso_2d(geometry).stage("mesh")?;
        let bounds = extract_boundary_sets(&model.torso).stage("mesh")?;
        let electrodes =
            place_electrodes(&model.torso, &bounds, n_electrodes, placement, electrode_seed).stage("electrodes")?;
        let truth = simulate(&model, &bounds, &electrodes, table, sim).stage("simulate")?;
        let start = Instant::now();
        let cond = table.field(&model.torso, model.heart_center, sim.fiber_rule).stage("transfer")?;
        let transfer = TransferMatrix::build(&model.torso, &cond, &bounds, &electrodes).stage("transfer")?;
        let surface = SurfaceGeometry::new(&model.torso, &bounds).stage("weights")?;
        let weights = SpaceTimeWeights::new(&surface, &truth.grid).stage("weights")?;
        let build_seconds = start.elapsed().as_secs_f64();
        Ok(Self {
            nodal_weights: weights.nodal_weights(),
            model,
            bounds,
            electrodes,
            surface,
            weights,
            transfer,
            truth,
            build_seconds,
        })
    }

    /// Same geometry and truth observed through a different electrode subset.
    pub fn with_electrodes(&self, electrodes: ElectrodeSet) -> Result<Self> {
        let mut pos = vec![usize::MAX; self.model.torso.n_vertices()];
        for (k, &v) in self.bounds.gamma.iter().enumerate() {
            pos[v] = k;
        }
        let rows: Vec<usize> = electrodes
            .nodes
            .iter()
            .map(|&v| match pos.get(v) {
                Some(&k) if k != usize::MAX => Ok(k),
                _ => Err(Error::Topology(format!("electrode node {v} is not on the torso surface"))),
            })
            .collect::<Result<_>>()?;
        let transfer = self.transfer.with_electrode_rows(&rows)?;
        let mut truth = self.truth.clone();
        let full: Vec<usize> = electrodes.nodes.iter().map(|&v| self.model.torso_to_full[v]).collect();
        truth.z = truth.v.select_rows(&full);
        Ok(Self {
            electrodes,
            transfer,
            truth,
            ..self.clone()
        })
    }

    pub fn noisy_data(&self, snr_db: f64, seed: u64) -> Result<NoisyData> {
        add_noise(&self.truth.z, snr_db, seed)
    }

    pub fn metrics(&self, u: &SpaceTimeField) -> Result<Metrics> {
        metrics(u, &self.truth.u, &self.nodal_weights)
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub u: SpaceTimeField,
    pub trace: Option<SolveTrace>,
    pub seconds: f64,
}

/// Reconstructs with one method and parameter pair. Operator norms are cached
/// per gradient space and `λ_t/λ_γ` ratio and rescaled, since `L` is
/// positively homogeneous in `Λ`.
#[derive(Debug)]
pub struct Reconstructor<'a> {
    scenario: &'a Scenario,
    settings: SolverSettings,
    base: HashMap<GradientSpace, InverseProblem>,
    norms: HashMap<(GradientSpace, u64, u64), f64>,
}

impl<'a> Reconstructor<'a> {
    pub fn new(scenario: &'a Scenario, settings: SolverSettings) -> Self {
        Self {
            scenario,
            settings,
            base: HashMap::new(),
            norms: HashMap::new(),
        }
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    fn problem(&mut self, space: GradientSpace, lambda: Anisotropy, z: &SpaceTimeField) -> Result<InverseProblem> {
        let scn = self.scenario;
        if !self.base.contains_key(&space) {
            let grad = GradOp::new(space, Anisotropy::isotropic(1.0)?, &scn.surface, &scn.weights)?;
            let mut pb = InverseProblem::new(scn.transfer.clone(), z.clone(), grad, &scn.weights)?;
            pb.eps_tv = self.settings.eps_tv;
            self.base.insert(space, pb);
        }
        let base = &self.base[&space];
        let pb = if base.z() == z { base.clone() } else { base.with_data(z.clone())? };
        Ok(pb.with_grad(pb.grad().with_weights(lambda)))
    }

    fn norm(&mut self, space: GradientSpace, lambda: Anisotropy) -> Result<f64> {
        let scale = lambda.lambda_gamma.max(lambda.lambda_t);
        if scale == 0.0 {
            return Ok(0.0);
        }
        let unit = if lambda.lambda_gamma >= lambda.lambda_t {
            Anisotropy::new(1.0, lambda.lambda_t / lambda.lambda_gamma)?
        } else {
            Anisotropy::new(lambda.lambda_gamma / lambda.lambda_t, 1.0)?
        };
        let key = (space, unit.lambda_gamma.to_bits(), unit.lambda_t.to_bits());
        if let Some(&l) = self.norms.get(&key) {
            return Ok(scale * l);
        }
        let grad = GradOp::new(space, unit, &self.scenario.surface, &self.scenario.weights)?;
        let l = solver_norm(&grad, self.settings.seed)?;
        self.norms.insert(key, l);
        Ok(scale * l)
    }

    pub fn run(&mut self, method: Method, lambda: Lambda, z: &SpaceTimeField) -> Result<Reconstruction> {
        let lambda = lambda.for_method(method);
        let scn = self.scenario;
        let w = &scn.weights;
        let start = Instant::now();
        let (u, trace) = match method {
            Method::T0 => (solve_t0(&scn.transfer, z, lambda.gamma, &w.surface_mass)?, None),
            Method::T1S => (solve_t1s(&scn.transfer, z, lambda.gamma, &w.surface_stiffness)?, None),
            Method::T1ST => (
                solve_t1st(&scn.transfer, z, lambda.gamma, lambda.t, &w.surface_mass, &w.surface_stiffness)?,
                None,
            ),
            _ => {
                let space = method.gradient_space().expect("TV method");
                let aniso = Anisotropy::new(lambda.gamma, lambda.t)?;
                let l = self.norm(space, aniso)?;
                let pb = self.problem(space, aniso, z)?;
                let mut params = PdhgParams::for_norm(l, self.settings.seed);
                params.tol = self.settings.tol;
                params.max_iter = self.settings.max_iter;
                let (u, trace) = pdhg_solve(&pb, &params, l)?;
                (u, Some(trace))
            }
        };
        Ok(Reconstruction {
            u,
            trace,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// One evaluated grid point.
#[derive(Clone, Debug)]
pub struct GridPoint {
    pub method: Method,
    pub lambda: Lambda,
    /// `None` when the reconstruction failed.
    pub metrics: Option<Metrics>,
    pub iterations: usize,
    pub converged: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub best: GridPoint,
    pub table: Vec<GridPoint>,
}

/// Evaluates every grid point and keeps the smallest `V_h` error. Ties go to
/// the larger `(λ_γ, λ_t)`.
pub fn grid_search(
    rec: &mut Reconstructor<'_>,
    method: Method,
    grid: &[Lambda],
    z: &SpaceTimeField,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty parameter grid".into()));
    }
    let mut table = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let lambda = lambda.for_method(method);
        let point = match rec.run(method, lambda, z).and_then(|r| Ok((rec.scenario().metrics(&r.u)?, r))) {
            Ok((m, r)) => GridPoint {
                method,
                lambda,
                metrics: Some(m),
                iterations: r.trace.as_ref().map_or(0, |t| t.iterations()),
                converged: r.trace.as_ref().is_none_or(|t| t.termination == Termination::Converged),
                seconds: r.seconds,
            },
            Err(e) => {
                log::warn!("{method} at λ = ({:e}, {:e}) failed: {e}", lambda.gamma, lambda.t);
                GridPoint {
                    method,
                    lambda,
                    metrics: None,
                    iterations: 0,
                    converged: false,
                    seconds: 0.0,
                }
            }
        };
        table.push(point);
    }
    let best = table
        .iter()
        .filter(|p| p.metrics.is_some())
        .min_by(|a, b| {
            let (va, vb) = (a.metrics.unwrap().vh, b.metrics.unwrap().vh);
            va.total_cmp(&vb)
                .then(b.lambda.gamma.total_cmp(&a.lambda.gamma))
                .then(b.lambda.t.total_cmp(&a.lambda.t))
        })
        .cloned()
        .ok_or(Error::GridExhausted(grid.len()))?;
    Ok(GridResult { best, table })
}

impl Reconstructor<'_> {
    /// Norms computed so far, reusable by a reconstructor on the same surface
    /// and time grid.
    pub fn norm_cache(&self) -> HashMap<(GradientSpace, u64, u64), f64> {
        self.norms.clone()
    }

    pub fn with_norm_cache(mut self, cache: HashMap<(GradientSpace, u64, u64), f64>) -> Self {
        self.norms = cache;
        self
    }
}

/// In-memory results of an experiment; `files` maps output names to contents.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricsRow>,
    pub grids: Vec<(f64, GridResult)>,
    pub files: Vec<(String, String)>,
}

impl ExperimentOutput {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }
}

fn output_name(stem: &str, method: Method, snr: f64, several: bool, ext: &str) -> String {
    if several {
        format!("{stem}_{method}_{snr}db.{ext}")
    } else {
        format!("{stem}_{method}.{ext}")
    }
}

/// Simulate, grid-search every method at every SNR on the first noise seed,
/// reconstruct at the optimum and collect the report files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let scn = Scenario::build(
        &cfg.geometry,
        &cfg.sim,
        &cfg.conductivity,
        cfg.n_electrodes,
        cfg.placement,
        cfg.electrode_seed,
    )?;
    run_experiment_on(cfg, &scn)
}

pub fn run_experiment_on(cfg: &ExperimentConfig, scn: &Scenario) -> Result<ExperimentOutput> {
    let seed = cfg.noise_seeds[0];
    let several = cfg.snr_db.len() > 1;
    let mut rec = Reconstructor::new(scn, cfg.solver);
    let mut rows = Vec::new();
    let mut grids = Vec::new();
    let mut files = Vec::new();
    let mut grid_text = String::new();
    let mut timings = String::from("stage,method,snr_db,seconds\n");
    timings.push_str(&format!("operators,,,{:.6}\n", scn.build_seconds));
    let scale = scn.truth.u.max_abs();
    files.push(("heatmap_truth.ppm".to_string(), heatmap_ppm(&scn.truth.u, scale)));
    for (k, &snr) in cfg.snr_db.iter().enumerate() {
        let noisy = scn.noisy_data(snr, seed).stage("noise")?;
        if k == 0 {
            let bundle = crate::sim::TruthBundle::new(&scn.truth, &noisy, snr, seed);
            files.push(("truth_bundle.txt".to_string(), bundle.to_text()));
        }
        for &method in &cfg.methods {
            let result = grid_search(&mut rec, method, &cfg.grid.points(method), &noisy.z).stage("gridsearch")?;
            let body = report::grid_csv(snr, scn.electrodes.len(), &result.table);
            if grid_text.is_empty() {
                grid_text.push_str(&body);
            } else {
                grid_text.extend(body.lines().skip(1).map(|l| format!("{l}\n")));
            }
            let best = rec.run(method, result.best.lambda, &noisy.z).stage("reconstruct")?;
            let m = scn.metrics(&best.u).stage("metrics")?;
            rows.push(MetricsRow {
                method,
                lambda: result.best.lambda,
                snr_db: snr,
                n_electrodes: scn.electrodes.len(),
                metrics: m,
                seconds: cfg.timing.then_some(best.seconds),
            });
            timings.push_str(&format!("solve,{method},{snr},{:.6}\n", best.seconds));
            files.push((output_name("heatmap", method, snr, several, "ppm"), heatmap_ppm(&best.u, scale)));
            if let Some(trace) = &best.trace {
                files.push((output_name("trace", method, snr, several, "csv"), trace.to_csv()));
            }
            grids.push((snr, result));
        }
    }
    files.push(("metrics.csv".to_string(), metrics_csv(&rows)));
    files.push(("gridsearch.csv".to_string(), grid_text));
    if cfg.timing {
        files.push(("timings.csv".to_string(), timings));
    }
    Ok(ExperimentOutput { rows, grids, files })
}

/// Writes every file or none: anything already written is removed when a
/// later write fails.
pub fn write_outputs(dir: &std::path::Path, files: &[(String, String)]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, content) in files {
        let path = dir.join(name);
        if let Err(e) = std::fs::write(&path, content) {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            return Err(Error::io(path, e));
        }
        written.push(path);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub method: Method,
    pub lambda: Lambda,
    pub n_electrodes: usize,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    /// Per method, the median over seeds of the Spearman correlation between
    /// electrode count and `V_h` error.
    pub spearman: Vec<(Method, f64)>,
}

impl AblationResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,lambda_g,lambda_t,n_electrodes,seed,re,cc,vh\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:e},{:e},{},{},{},{},{}\n",
                r.method, r.lambda.gamma, r.lambda.t, r.n_electrodes, r.seed, r.metrics.re, r.metrics.cc, r.metrics.vh
            ));
        }
        out.push_str("\nmethod,median_spearman_count_vh\n");
        for (m, s) in &self.spearman {
            out.push_str(&format!("{m},{s}\n"));
        }
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Freezes each method's parameters at the grid optimum for the anchor
/// electrode count, then reconstructs for every count in
/// `cfg.ablation_counts` and every noise seed at the first SNR.
pub fn ablate_electrodes(cfg: &ExperimentConfig) -> Result<AblationResult> {
    cfg.validate()?;
    let anchor = Scenario::build(
        &cfg.geometry,
        &cfg.sim,
        &cfg.conductivity,
        cfg.n_electrodes,
        cfg.placement,
        cfg.electrode_seed,
    )?;
    let snr = cfg.snr_db[0];
    let mut rec = Reconstructor::new(&anchor, cfg.solver);
    let z = anchor.noisy_data(snr, cfg.noise_seeds[0]).stage("noise")?.z;
    let mut lambdas = Vec::new();
    for &method in &cfg.methods {
        let best = grid_search(&mut rec, method, &cfg.grid.points(method), &z).stage("gridsearch")?;
        lambdas.push((method, best.best.lambda));
    }
    ablate_with(cfg, &anchor, &lambdas, rec.norm_cache())
}

/// Ablation with given parameters on an already built scenario.
pub fn ablate_with(
    cfg: &ExperimentConfig,
    base: &Scenario,
    lambdas: &[(Method, Lambda)],
    norms: HashMap<(GradientSpace, u64, u64), f64>,
) -> Result<AblationResult> {
    let snr = cfg.snr_db[0];
    let mut rows = Vec::new();
    let mut norms = norms;
    for &count in &cfg.ablation_counts {
        let es = place_electrodes(&base.model.torso, &base.bounds, count, cfg.placement, cfg.electrode_seed)
            .stage("electrodes")?;
        let scn = base.with_electrodes(es).stage("transfer")?;
        let mut rec = Reconstructor::new(&scn, cfg.solver).with_norm_cache(norms);
        for &seed in &cfg.noise_seeds {
            let z = scn.noisy_data(snr, seed).stage("noise")?.z;
            for &(method, lambda) in lambdas {
                let r = rec.run(method, lambda, &z).stage("reconstruct")?;
                rows.push(AblationRow {
                    method,
                    lambda: lambda.for_method(method),
                    n_electrodes: count,
                    seed,
                    metrics: scn.metrics(&r.u).stage("metrics")?,
                });
            }
        }
        norms = rec.norm_cache();
    }
    let mut correlations = Vec::new();
    if cfg.ablation_counts.len() >= 2 {
        for &(method, _) in lambdas {
            let per_seed = cfg
                .noise_seeds
                .iter()
                .map(|&seed| {
                    let (x, y): (Vec<f64>, Vec<f64>) = rows
                        .iter()
                        .filter(|r| r.method == method && r.seed == seed)
                        .map(|r| (r.n_electrodes as f64, r.metrics.vh))
                        .unzip();
                    spearman(&x, &y)
                })
                .collect::<Result<Vec<_>>>()?;
            correlations.push((method, median(per_seed)));
        }
    }
    Ok(AblationResult {
        rows,
        spearman: correlations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::TimeGrid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(seed: u64, nv: usize, nt: usize) -> SpaceTimeField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SpaceTimeField::from_fn(nv, nt, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn metric_identities() {
        let ug = random_field(1, 7, 5);
        let w = vec![0.3; 35];
        let m = metrics(&ug, &ug, &w).unwrap();
        assert_eq!((m.re, m.vh), (0.0, 0.0));
        assert!((m.cc - 1.0).abs() < 1e-15);
        assert_eq!(metric_re(&SpaceTimeField::zeros(7, 5), &ug).unwrap(), 1.0);
        let mean = ug.as_slice().iter().sum::<f64>() / 35.0;
        let centred = SpaceTimeField::from_fn(7, 5, |i, s| ug.get(i, s) - mean);
        let neg = SpaceTimeField::from_fn(7, 5, |i, s| -centred.get(i, s));
        assert!((metric_cc(&neg, &centred).unwrap() + 1.0).abs() < 1e-14);
        let flat = SpaceTimeField::from_fn(7, 5, |_, _| 2.0);
        assert!(matches!(metric_cc(&ug, &flat), Err(Error::Undefined(_))));
        assert_eq!(metric_cc(&flat, &ug).unwrap(), 0.0);
        assert!(metric_re(&ug, &SpaceTimeField::zeros(7, 5)).is_err());
        assert!(metric_vh(&ug, &ug, &w[..3]).is_err());
    }

    proptest! {
        #[test]
        fn cc_is_affine_invariant(seed in 0u64..1000, a in 0.01f64..100.0, b in -50.0f64..50.0) {
            let u = random_field(seed, 6, 4);
            let ug = random_field(seed + 1, 6, 4);
            let v = SpaceTimeField::from_fn(6, 4, |i, s| a * u.get(i, s) + b);
            let (c0, c1) = (metric_cc(&u, &ug).unwrap(), metric_cc(&v, &ug).unwrap());
            prop_assert!((c0 - c1).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&c1));
        }

        #[test]
        fn re_is_scale_invariant(seed in 0u64..1000, c in 1e-3f64..1e3) {
            let u = random_field(seed, 5, 3);
            let ug = random_field(seed + 7, 5, 3);
            let scale = |f: &SpaceTimeField| SpaceTimeField::from_fn(5, 3, |i, s| c * f.get(i, s));
            let (r0, r1) = (metric_re(&u, &ug).unwrap(), metric_re(&scale(&u), &scale(&ug)).unwrap());
            prop_assert!((r0 - r1).abs() <= 1e-12 * r0.max(1.0));
            prop_assert!(r1 >= 0.0);
        }
    }

    #[test]
    fn vh_is_stable_under_refinement() {
        let norm = |n: usize, s: usize| {
            let geo = GeometryConfig {
                angular_resolution: n,
                torso_layers: 3,
                lungs: None,
                ..GeometryConfig::default()
            };
            let model = generate_torso_2d(&geo).unwrap();
            let b = extract_boundary_sets(&model.torso).unwrap();
            let surf = SurfaceGeometry::new(&model.torso, &b).unwrap();
            let grid = TimeGrid::uniform(0.0, 100.0, s).unwrap();
            let w = SpaceTimeWeights::new(&surf, &grid).unwrap();
            let c = model.heart_center;
            let f = SpaceTimeField::from_fn(surf.n_nodes(), s + 1, |i, k| {
                let p = surf.points[i];
                let th = (p[1] - c[1]).atan2(p[0] - c[0]);
                (2.0 * th).sin() * (grid.nodes()[k] / 30.0).cos() + 1.0
            });
            metric_vh(&f, &SpaceTimeField::zeros(surf.n_nodes(), s + 1), &w.nodal_weights()).unwrap()
        };
        let (coarse, fine) = (norm(60, 30), norm(240, 120));
        assert!((coarse - fine).abs() <= 0.02 * fine, "{coarse} vs {fine}");
    }

    #[test]
    fn spearman_ranks() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[9.0, 7.0, 4.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 8.0, 27.0]).unwrap() - 1.0).abs() < 1e-15);
        let tied = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(tied > 0.9 && tied < 1.0);
        assert!(spearman(&[1.0, 2.0], &[3.0, 3.0]).is_err());
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert_eq!("tvst2".parse::<Method>().unwrap(), Method::TVST2);
        assert!("TV3".parse::<Method>().is_err());
    }

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.geometry.angular_resolution = 32;
        cfg.geometry.torso_layers = 6;
        cfg.sim.intervals = 20;
        cfg.n_electrodes = 8;
        cfg.grid.lo_exp = -10;
        cfg.grid.hi_exp = -4;
        cfg
    }

    #[test]
    fn grid_search_ties_and_table_size() {
        let cfg = tiny();
        let scn = Scenario::build(&cfg.geometry, &cfg.sim, &cfg.conductivity, 8, Placement::UniformAngle, 0).unwrap();
        let z = scn.noisy_data(50.0, 0).unwrap().z;
        let mut rec = Reconstructor::new(&scn, SolverSettings::default());
        let single = grid_search(&mut rec, Method::T0, &[Lambda::new(1e-6, 0.0)], &z).unwrap();
        assert_eq!(single.best.lambda, Lambda::new(1e-6, 0.0));
        let pts = cfg.grid.points(Method::T1S);
        let full = grid_search(&mut rec, Method::T1S, &pts, &z).unwrap();
        assert_eq!(full.table.len(), pts.len());
        // zero data: every λ reconstructs zero exactly, so the largest wins
        let zero = SpaceTimeField::zeros(z.n_space(), z.n_time());
        let tie = grid_search(&mut rec, Method::T0, &cfg.grid.points(Method::T0), &zero).unwrap();
        assert_eq!(tie.best.lambda.gamma, 1e-4);
        assert!(grid_search(&mut rec, Method::T0, &[], &z).is_err());
        // every point fails: λ = 0 leaves the normal matrix singular
        assert!(matches!(
            grid_search(&mut rec, Method::T0, &[Lambda::new(0.0, 0.0)], &z),
            Err(Error::GridExhausted(1))
        ));
    }

    #[test]
    fn smoke_experiment_is_fast_and_deterministic() {
        let mut cfg = tiny();
        cfg.methods = vec![Method::T0];
        let start = Instant::now();
        let a = run_experiment(&cfg).unwrap();
        assert!(start.elapsed().as_secs_f64() < 10.0);
        assert_eq!(a.rows.len(), 1);
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.file("metrics.csv").unwrap(), b.file("metrics.csv").unwrap());
        assert_eq!(a.file("metrics.csv").unwrap().lines().count(), 2);
        assert!(a.file("truth_bundle.txt").is_some());
        assert!(a.file("heatmap_T0.ppm").unwrap().starts_with("P3\n21 32\n"));

        let dir = tempfile::tempdir().unwrap();
        write_outputs(dir.path(), &a.files).unwrap();
        assert!(dir.path().join("metrics.csv").exists());
    }

    #[test]
    fn tv_methods_run_on_the_tiny_model() {
        let mut cfg = tiny();
        cfg.methods = vec![Method::TVS1, Method::TVST2];
        cfg.grid.lo_exp = -8;
        cfg.grid.hi_exp = -7;
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert!(out.file("trace_TVST2.csv").unwrap().starts_with("iteration,g,f,j,delta_inf,seconds\n"));
        assert!(out.rows.iter().all(|r| r.metrics.re < 1.5));
    }

    #[test]
    fn ablation_rejects_too_many_electrodes() {
        let mut cfg = tiny();
        cfg.methods = vec![Method::T0];
        cfg.ablation_counts = vec![4, 33];
        let err = ablate_electrodes(&cfg).unwrap_err();
        assert!(matches!(err, Error::Stage { source, .. } if matches!(*source, Error::Capacity { requested: 33, available: 32 })));
        cfg.ablation_counts = vec![4, 8, 16, 32];
        cfg.noise_seeds = vec![0, 1];
        let res = ablate_electrodes(&cfg).unwrap();
        assert_eq!(res.rows.len(), 8);
        assert_eq!(res.spearman.len(), 1);
    }
}
