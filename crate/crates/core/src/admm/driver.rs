use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::agent::{penalized_cost, AgentProblem};
use super::ladmm::ladmm_w_step;
use super::scadmm::scadmm_w_step;
use super::{dual_step, stack, unstack, z_step, AdmmConfig, Method, Mode, SamplingObjective, TrajectoryVars};
use crate::error::{Error, Result};
use crate::geometry::{Point, Rect};

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub z: Vec<f64>,
    pub mu: Vec<f64>,
    pub w: Vec<TrajectoryVars>,
    /// `|z^(k) - v^(k)|_2` per iteration.
    pub residual_history: Vec<f64>,
    /// `f0(z) + sum_i J_i(w_i)` per iteration.
    pub objective_history: Vec<f64>,
}

/// Messages exchanged per agent: queries received from the station and
/// terminal positions sent back.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageStats {
    pub queries: Vec<usize>,
    pub replies: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub state: ConsensusState,
    pub iterations: usize,
    pub converged: bool,
    pub wall_ms: f64,
    pub method: Method,
    pub mode: Mode,
    pub messages: MessageStats,
    pub trust_radii: Vec<f64>,
}

/// JSON export of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub objectives: Vec<f64>,
    pub wall_ms: f64,
    pub mode: Mode,
    pub method: Method,
}

impl SolveOutcome {
    pub fn trace(&self) -> SolverTrace {
        SolverTrace {
            iterations: self.iterations,
            residuals: self.state.residual_history.clone(),
            objectives: self.state.objective_history.clone(),
            wall_ms: self.wall_ms,
            mode: self.mode,
            method: self.method,
        }
    }
}

// Agent-side state; the station only ever sees the returned terminal position.
struct Agent<'a> {
    problem: &'a AgentProblem,
    cfg: &'a AdmmConfig,
    method: Method,
    w: TrajectoryVars,
    radius: f64,
    queries: usize,
    replies: usize,
}

struct AgentReply {
    v: Point,
    cost: f64,
}

impl<'a> Agent<'a> {
    fn new(problem: &'a AgentProblem, cfg: &'a AdmmConfig, method: Method) -> Self {
        Self {
            problem,
            cfg,
            method,
            w: TrajectoryVars::hold(&problem.start_state, problem.horizon),
            radius: cfg.sc.r_init,
            queries: 0,
            replies: 0,
        }
    }

    fn respond(&mut self, iteration: usize, target: Point) -> Result<AgentReply> {
        self.queries += 1;
        let rho = self.cfg.rho;
        let cost = match self.method {
            Method::Ladmm => {
                self.w = ladmm_w_step(self.problem, &target, rho, &self.w, self.cfg, iteration)?;
                self.problem.cost(&self.w)
            }
            Method::Scadmm => {
                let step = scadmm_w_step(self.problem, &self.w, &target, rho, self.radius, &self.cfg.sc)?;
                self.w = step.w;
                self.radius = step.radius;
                penalized_cost(self.problem, &self.w, self.cfg.sc.lambda)
            }
        };
        self.replies += 1;
        Ok(AgentReply { v: self.w.final_position(), cost })
    }
}

enum Query {
    Solve { iteration: usize, target: Point },
    Stop,
}

pub fn run_ladmm(
    problems: &[AgentProblem],
    objective: &dyn SamplingObjective,
    domain: &Rect,
    cfg: &AdmmConfig,
    mode: Mode,
) -> Result<SolveOutcome> {
    run(Method::Ladmm, problems, objective, domain, cfg, mode)
}

pub fn run_scadmm(
    problems: &[AgentProblem],
    objective: &dyn SamplingObjective,
    domain: &Rect,
    cfg: &AdmmConfig,
    mode: Mode,
) -> Result<SolveOutcome> {
    run(Method::Scadmm, problems, objective, domain, cfg, mode)
}

/// Runs either consensus scheme; both modes perform identical arithmetic.
pub fn run(
    method: Method,
    problems: &[AgentProblem],
    objective: &dyn SamplingObjective,
    domain: &Rect,
    cfg: &AdmmConfig,
    mode: Mode,
) -> Result<SolveOutcome> {
    cfg.validate()?;
    if problems.is_empty() {
        return Err(Error::InvalidInput("no agents".into()));
    }
    for p in problems {
        p.validate()?;
    }
    let started = Instant::now();
    let mut agents: Vec<Agent> = problems.iter().map(|p| Agent::new(p, cfg, method)).collect();
    let state = match mode {
        Mode::Centralized => station(problems, objective, domain, cfg, |k, targets| {
            agents.iter_mut().zip(targets).map(|(a, t)| a.respond(k, *t)).collect()
        }),
        Mode::Distributed => distributed(&mut agents, problems, objective, domain, cfg),
    };
    let (mut state, iterations, converged) = state?;
    state.w = agents.iter().map(|a| a.w.clone()).collect();
    Ok(SolveOutcome {
        state,
        iterations,
        converged,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        method,
        mode,
        messages: MessageStats {
            queries: agents.iter().map(|a| a.queries).collect(),
            replies: agents.iter().map(|a| a.replies).collect(),
        },
        trust_radii: agents.iter().map(|a| a.radius).collect(),
    })
}

fn distributed(
    agents: &mut [Agent<'_>],
    problems: &[AgentProblem],
    objective: &dyn SamplingObjective,
    domain: &Rect,
    cfg: &AdmmConfig,
) -> Result<(ConsensusState, usize, bool)> {
    std::thread::scope(|scope| {
        let (reply_tx, reply_rx) = mpsc::channel::<(usize, Result<AgentReply>)>();
        let mut query_txs = Vec::with_capacity(agents.len());
        for (i, agent) in agents.iter_mut().enumerate() {
            let (tx, rx) = mpsc::channel::<Query>();
            query_txs.push(tx);
            let reply_tx = reply_tx.clone();
            scope.spawn(move || {
                while let Ok(Query::Solve { iteration, target }) = rx.recv() {
                    if reply_tx.send((i, agent.respond(iteration, target))).is_err() {
                        break;
                    }
                }
            });
        }
        drop(reply_tx);

        let result = station(problems, objective, domain, cfg, |k, targets| {
            for (tx, t) in query_txs.iter().zip(targets) {
                tx.send(Query::Solve { iteration: k, target: *t }).map_err(|_| Error::ChannelClosed)?;
            }
            // barrier: wait for every agent, then reduce in index order
            let mut slots: Vec<Option<Result<AgentReply>>> = (0..targets.len()).map(|_| None).collect();
            for _ in 0..targets.len() {
                let (i, r) = reply_rx.recv().map_err(|_| Error::ChannelClosed)?;
                slots[i] = Some(r);
            }
            slots.into_iter().map(|s| s.ok_or(Error::ChannelClosed)?).collect()
        });
        for tx in &query_txs {
            let _ = tx.send(Query::Stop);
        }
        result
    })
}

// The central station's loop; `exchange` delivers the query points and
// returns the agents' replies in index order.
fn station<F>(
    problems: &[AgentProblem],
    objective: &dyn SamplingObjective,
    domain: &Rect,
    cfg: &AdmmConfig,
    mut exchange: F,
) -> Result<(ConsensusState, usize, bool)>
where
    F: FnMut(usize, &[Point]) -> Result<Vec<AgentReply>>,
{
    let start: Vec<Point> = problems.iter().map(|p| p.start_state.position()).collect();
    let mut z = stack(&start);
    let mut mu = vec![0.0; z.len()];
    let mut residual_history = Vec::new();
    let mut objective_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for k in 0..cfg.k_max {
        let targets: Vec<Point> = (0..problems.len())
            .map(|i| Point::new(z[2 * i] + mu[2 * i] / cfg.rho, z[2 * i + 1] + mu[2 * i + 1] / cfg.rho))
            .collect();
        let replies = exchange(k, &targets)?;
        let v = stack(&replies.iter().map(|r| r.v).collect::<Vec<_>>());
        let (_, grad) = objective.value_and_gradient(&unstack(&v))?;
        z = z_step(&v, &mu, cfg.rho, cfg.lipschitz, &grad, domain);
        mu = dual_step(&mu, &z, &v, cfg.rho);
        let residual = z.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let f0 = objective.value(&unstack(&z)).unwrap_or(f64::NAN);
        residual_history.push(residual);
        objective_history.push(f0 + replies.iter().map(|r| r.cost).sum::<f64>());
        iterations = k + 1;
        if residual < cfg.eps_res {
            converged = true;
            break;
        }
    }
    Ok((ConsensusState { z, mu, w: Vec::new(), residual_history, objective_history }, iterations, converged))
}
