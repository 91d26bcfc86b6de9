//! Episode loop, synthetic ground truth, metrics and batch experiments.
//!
//! An episode measures at the robots' positions, plans the next horizon for
//! all robots with one consensus solve, applies every planned control, and
//! repeats; measurements are therefore taken every `H` time steps.

mod field;
mod metrics;
mod output;

pub use field::{generate_ground_truth, measure, GroundTruthConfig, GroundTruthField};
pub use metrics::{eval_grid, metrics, FieldMetrics};
pub use output::{write_field_csv, write_metrics_csv, write_outputs, write_traces_json};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::admm::{self, AdmmConfig, AgentProblem, Method, Mode, SolverTrace};
use crate::error::{Error, Result};
use crate::geometry::{movement_region, Point, Rect};
use crate::gp::{train, Dataset, GpPosterior, Hyperparams, TrainOptions};
use crate::vehicle::{rollout, ControlBounds, ControlInput, CostWeights, RobotState};

// Independent random streams derived from the run seed.
const FIELD_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const NOISE_STREAM: u64 = 0xc2b2_ae3d_27d4_eb4f;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub domain: Rect,
    pub num_robots: usize,
    pub horizon: usize,
    pub dt: f64,
    pub measurement_steps: usize,
    pub bounds: ControlBounds,
    pub weights: CostWeights,
    pub admm: AdmmConfig,
    pub seed: u64,
    pub method: Method,
    pub mode: Mode,
    /// Spacing of the evaluation grid in meters.
    pub eval_grid: f64,
    /// Voronoi shrink margin in meters.
    pub safety_margin: f64,
    pub noise_sd: f64,
    /// Minimum pairwise distance of the initial positions.
    pub min_separation: f64,
    pub ground_truth: GroundTruthConfig,
    /// Controller hyperparameters; defaults to the ground-truth generator's.
    pub hyperparams: Option<Hyperparams>,
    /// Fit the hyperparameters by maximum likelihood at step 0 and then every
    /// this many measurement steps; `None` keeps them fixed.
    pub retrain_every: Option<usize>,
    pub runs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            domain: Rect::default(),
            num_robots: 5,
            horizon: 10,
            dt: 0.2,
            measurement_steps: 15,
            bounds: ControlBounds::default(),
            weights: CostWeights::default(),
            admm: AdmmConfig::default(),
            seed: 0,
            method: Method::Scadmm,
            mode: Mode::Centralized,
            eval_grid: 1.0,
            safety_margin: 0.5,
            noise_sd: 0.1,
            min_separation: 2.0,
            ground_truth: GroundTruthConfig::default(),
            hyperparams: None,
            retrain_every: None,
            runs: 20,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.weights.validate()?;
        self.admm.validate()?;
        let ok = self.num_robots >= 1
            && self.horizon >= 1
            && self.dt > 0.0
            && self.eval_grid > 0.0
            && self.safety_margin > 0.0
            && self.noise_sd >= 0.0
            && self.min_separation >= 0.0
            && self.retrain_every != Some(0);
        if !ok {
            return Err(Error::InvalidInput("experiment parameters out of range".into()));
        }
        if let Some(h) = &self.hyperparams {
            h.validate()?;
        }
        Ok(())
    }

    /// Hyperparameters the controller starts from.
    pub fn controller_hyperparams(&self) -> Hyperparams {
        self.hyperparams.unwrap_or(Hyperparams {
            constant_mean: self.ground_truth.constant_mean,
            signal_variance: self.ground_truth.signal_variance.max(1e-12),
            length_scale: self.ground_truth.length_scale,
            noise_variance: (self.noise_sd * self.noise_sd).max(1e-6),
        })
    }

    pub fn ground_truth_field(&self, seed: u64) -> Result<GroundTruthField> {
        match &self.ground_truth.csv_path {
            Some(path) => {
                let file = std::fs::File::open(path)?;
                GroundTruthField::from_csv(
                    file,
                    &self.domain,
                    self.ground_truth.resolution,
                    &self.controller_hyperparams(),
                )
            }
            None => generate_ground_truth(seed ^ FIELD_STREAM, &self.ground_truth, &self.domain),
        }
    }
}

/// One row per measurement step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub alpv: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Wall time of the solve that led to this step; zero for step 0.
    pub wall_ms: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Worst-case values of the safety and feasibility checks over an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    /// Largest control-box excess of any applied control; `<= 0` is feasible.
    pub max_control_excess: f64,
    /// Largest region violation of any planned intra-horizon position.
    pub max_region_violation: f64,
    /// Largest region violation along the executed paths. Differs from the
    /// planned value by at most the propagated dynamics residual.
    pub max_path_region_violation: f64,
    /// Largest dynamics residual of any returned plan.
    pub max_dynamics_residual: f64,
    /// Smallest `|s_i - s_j| - (eps_i + eps_j)` at measurement steps.
    pub min_separation_margin: f64,
}

impl Default for Audit {
    fn default() -> Self {
        Self {
            max_control_excess: f64::NEG_INFINITY,
            max_region_violation: f64::NEG_INFINITY,
            max_path_region_violation: f64::NEG_INFINITY,
            max_dynamics_residual: 0.0,
            min_separation_margin: f64::INFINITY,
        }
    }
}

/// Posterior mean and variance on the evaluation grid at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub step: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub seed: u64,
    pub method: Method,
    pub mode: Mode,
    pub steps: Vec<StepRecord>,
    pub traces: Vec<SolverTrace>,
    /// Every robot state visited, per robot, starting with the initial pose.
    pub paths: Vec<Vec<RobotState>>,
    pub measurements: Dataset,
    pub snapshots: Vec<FieldSnapshot>,
    pub audit: Audit,
    /// Set when a solve failed and the episode stopped early.
    pub error: Option<String>,
}

/// Uniform poses with rejection sampling on the pairwise distance.
pub fn initial_poses<R: Rng>(cfg: &ExperimentConfig, rng: &mut R) -> Result<Vec<RobotState>> {
    let d = &cfg.domain;
    let m = cfg.safety_margin;
    if d.width() <= 2.0 * m || d.height() <= 2.0 * m {
        return Err(Error::DegenerateConfiguration("domain is narrower than the safety margin".into()));
    }
    let mut poses: Vec<RobotState> = Vec::with_capacity(cfg.num_robots);
    let mut attempts = 0;
    while poses.len() < cfg.num_robots {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::DegenerateConfiguration("could not place robots with the requested separation".into()));
        }
        let p = Point::new(rng.random_range(d.x_min + m..d.x_max - m), rng.random_range(d.y_min + m..d.y_max - m));
        let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        if poses.iter().all(|q| (q.position() - p).norm() >= cfg.min_separation) {
            poses.push(RobotState::new(p.x, p.y, heading));
        }
    }
    Ok(poses)
}

struct Episode<'a> {
    cfg: &'a ExperimentConfig,
    field: GroundTruthField,
    grid: Vec<Point>,
    truth: Vec<f64>,
    noise: ChaCha8Rng,
    hyper: Hyperparams,
    record: MetricsRecord,
}

impl Episode<'_> {
    fn measure_all(&mut self, step: usize, states: &[RobotState]) -> Result<()> {
        for s in states {
            let v = measure(&self.field, &s.position(), self.cfg.noise_sd, &mut self.noise)?;
            self.record.measurements.push(s.position(), v);
        }
        let due = self.cfg.retrain_every.is_some_and(|k| step % k == 0);
        if due && self.record.measurements.len() >= 2 {
            self.hyper = train(&self.record.measurements, &self.hyper, &TrainOptions::default())?;
        }
        Ok(())
    }

    fn record_step(&mut self, step: usize, wall_ms: f64, iterations: usize, converged: bool) -> Result<()> {
        let gp = GpPosterior::new(&self.record.measurements, &self.hyper)?;
        let (mean, var) = gp.predict_marginals(&self.grid);
        let m = metrics(&mean, &var, &self.truth)?;
        self.record.steps.push(StepRecord {
            step,
            alpv: m.alpv,
            rmse: m.rmse,
            mae: m.mae,
            wall_ms,
            iterations,
            converged,
        });
        self.record.snapshots.push(FieldSnapshot { step, mean, var });
        Ok(())
    }
}

/// Runs one seeded episode with `cfg.seed`.
///
/// A failed solve ends the episode; the partial record carries the error.
pub fn run_episode(cfg: &ExperimentConfig) -> Result<MetricsRecord> {
    cfg.validate()?;
    let seed = cfg.seed;
    let mut pose_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = initial_poses(cfg, &mut pose_rng)?;
    let field = cfg.ground_truth_field(seed)?;
    let grid = eval_grid(&cfg.domain, cfg.eval_grid);
    let truth = grid.iter().map(|p| field.value_at(p)).collect::<Result<Vec<_>>>()?;
    let mut ep = Episode {
        cfg,
        field,
        grid,
        truth,
        noise: ChaCha8Rng::seed_from_u64(seed ^ NOISE_STREAM),
        hyper: cfg.controller_hyperparams(),
        record: MetricsRecord {
            seed,
            method: cfg.method,
            mode: cfg.mode,
            steps: Vec::new(),
            traces: Vec::new(),
            paths: states.iter().map(|s| vec![*s]).collect(),
            measurements: Dataset::default(),
            snapshots: Vec::new(),
            audit: Audit::default(),
            error: None,
        },
    };
    let mut u_prev = vec![ControlInput::ZERO; cfg.num_robots];

    ep.measure_all(0, &states)?;
    ep.record_step(0, 0.0, 0, true)?;

    for step in 1..=cfg.measurement_steps {
        let positions: Vec<Point> = states.iter().map(|s| s.position()).collect();
        let mut problems = Vec::with_capacity(cfg.num_robots);
        let mut margins = Vec::with_capacity(cfg.num_robots);
        for i in 0..cfg.num_robots {
            let (region, eps) = movement_region(i, &positions, &cfg.domain, cfg.safety_margin)?;
            margins.push(eps);
            problems.push(AgentProblem {
                index: i,
                start_state: states[i],
                u_prev: u_prev[i],
                region,
                bounds: cfg.bounds,
                weights: cfg.weights,
                horizon: cfg.horizon,
                dt: cfg.dt,
            });
        }
        let gp = GpPosterior::new(&ep.record.measurements, &ep.hyper)?;
        let outcome = match admm::run(cfg.method, &problems, &gp, &cfg.domain, &cfg.admm, cfg.mode) {
            Ok(o) => o,
            Err(e) => {
                ep.record.error = Some(format!("step {step}: {e}"));
                break;
            }
        };
        ep.record.traces.push(outcome.trace());

        let audit = &mut ep.record.audit;
        for (i, p) in problems.iter().enumerate() {
            let w = &outcome.state.w[i];
            let controls = w.control_inputs();
            for u in &controls {
                let b = &cfg.bounds;
                let excess = (u.v - b.v_max).max(b.v_min - u.v).max(u.omega - b.omega_max).max(b.omega_min - u.omega);
                audit.max_control_excess = audit.max_control_excess.max(excess);
            }
            for s in &w.states {
                audit.max_region_violation =
                    audit.max_region_violation.max(p.region.max_violation(&Point::new(s[0], s[1])));
            }
            let path = rollout(&states[i], &controls, cfg.dt);
            for s in &path {
                let v = p.region.max_violation(&s.position());
                audit.max_path_region_violation = audit.max_path_region_violation.max(v);
            }
            audit.max_dynamics_residual = audit.max_dynamics_residual.max(p.constraints().max_dynamics_residual(w));
            states[i] = *path.last().expect("horizon is at least one");
            u_prev[i] = *controls.last().expect("horizon is at least one");
            ep.record.paths[i].extend(path);
        }
        for i in 0..cfg.num_robots {
            for j in i + 1..cfg.num_robots {
                let d = (states[i].position() - states[j].position()).norm();
                audit.min_separation_margin = audit.min_separation_margin.min(d - margins[i] - margins[j]);
            }
        }

        ep.measure_all(step, &states)?;
        ep.record_step(step, outcome.wall_ms, outcome.iterations, outcome.converged)?;
    }
    Ok(ep.record)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    /// Linear-interpolation quantiles; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self { min: v[0], q1: q(0.25), median: q(0.5), q3: q(0.75), max: v[v.len() - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub method: Method,
    pub mode: Mode,
    pub runs: usize,
    pub failures: usize,
    pub final_alpv: Option<Quartiles>,
    pub final_rmse: Option<Quartiles>,
    pub final_mae: Option<Quartiles>,
    /// Per-solve wall time over all solves of all runs.
    pub solve_wall_ms: Option<Quartiles>,
    pub iterations: Option<Quartiles>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub records: Vec<MetricsRecord>,
    /// Errors of runs that could not even start, by run index.
    pub run_errors: Vec<(usize, String)>,
    pub summary: BatchSummary,
}

/// Independent episodes with seeds `cfg.seed, cfg.seed + 1, ...`.
pub fn run_batch(cfg: &ExperimentConfig, n_runs: usize) -> Result<BatchReport> {
    if n_runs == 0 {
        return Err(Error::InvalidInput("a batch needs at least one run".into()));
    }
    cfg.validate()?;
    let mut records = Vec::new();
    let mut run_errors = Vec::new();
    for r in 0..n_runs {
        let run_cfg = ExperimentConfig { seed: cfg.seed.wrapping_add(r as u64), ..cfg.clone() };
        match run_episode(&run_cfg) {
            Ok(rec) => records.push(rec),
            Err(e) => run_errors.push((r, e.to_string())),
        }
    }
    let summary = summarize(cfg.method, cfg.mode, n_runs, &records, run_errors.len());
    Ok(BatchReport { records, run_errors, summary })
}

fn summarize(
    method: Method,
    mode: Mode,
    runs: usize,
    records: &[MetricsRecord],
    start_failures: usize,
) -> BatchSummary {
    let last: Vec<&StepRecord> = records.iter().filter_map(|r| r.steps.last()).collect();
    let solves: Vec<&StepRecord> = records.iter().flat_map(|r| r.steps.iter().skip(1)).collect();
    BatchSummary {
        method,
        mode,
        runs,
        failures: start_failures + records.iter().filter(|r| r.error.is_some()).count(),
        final_alpv: Quartiles::of(&last.iter().map(|s| s.alpv).collect::<Vec<_>>()),
        final_rmse: Quartiles::of(&last.iter().map(|s| s.rmse).collect::<Vec<_>>()),
        final_mae: Quartiles::of(&last.iter().map(|s| s.mae).collect::<Vec<_>>()),
        solve_wall_ms: Quartiles::of(&solves.iter().map(|s| s.wall_ms).collect::<Vec<_>>()),
        iterations: Quartiles::of(&solves.iter().map(|s| s.iterations as f64).collect::<Vec<_>>()),
    }
}
