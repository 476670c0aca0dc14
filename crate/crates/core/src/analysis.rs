//! Post-hoc checks on logged trajectories: convergence rates, equilibria,
//! Lyapunov monotonicity and the gain/spread sweep.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::{
    agent_terms, apply_design, classify_critical_points, design_gains, error_function, error_vector, random_unit,
    scenario_k_matrix, CriticalKind,
};
use crate::error::{Error, Result};
use crate::scenario::{LandmarkMode, Scenario};
use crate::sensing::{measure_all, AgentState};
use crate::simulator::{monte_carlo, MonteCarloOptions, MonteCarloSummary, Simulator, SystemState, TrajectoryLog};
use crate::so3::{exp_so3, frobenius_error, Rotation};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentConvergence {
    pub agent: usize,
    pub converged: bool,
    /// First sample time after which the error stays below the threshold.
    pub time_to_threshold: Option<f64>,
    /// Fitted decay rate of the Frobenius error, 1/s.
    pub rate: Option<f64>,
    pub r_squared: Option<f64>,
    pub terminal_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub threshold: f64,
    pub all_converged: bool,
    pub agents: Vec<AgentConvergence>,
    pub scenario_digest: String,
}

/// Least-squares fit of `ln err = a - rate t` over the decade the error spends
/// between `10 * threshold` and `threshold` before its final crossing.
/// The leader has no dynamics and gets no rate.
pub fn convergence_analysis(log: &TrajectoryLog, threshold: f64) -> ConvergenceReport {
    let agents: Vec<AgentConvergence> = (1..=log.n_agents)
        .map(|agent| {
            let terminal_error = log.terminal[agent - 1].err_frob;
            let converged = terminal_error < threshold && !log.times.is_empty();
            let mut out = AgentConvergence {
                agent,
                converged,
                time_to_threshold: None,
                rate: None,
                r_squared: None,
                terminal_error,
            };
            if !converged {
                return out;
            }
            let err = log.series(agent, |a| a.err_frob);
            let cross = match err.iter().rposition(|&e| e >= threshold) {
                Some(k) if k + 1 < err.len() => k + 1,
                Some(_) => return AgentConvergence { converged: false, ..out },
                None => 0,
            };
            out.time_to_threshold = Some(log.times[cross]);
            if agent == 1 || cross == 0 {
                return out;
            }
            let start = err[..cross].iter().rposition(|&e| e >= 10.0 * threshold).unwrap_or(0);
            let pts: Vec<(f64, f64)> =
                (start..=cross).filter(|&k| err[k] > 0.0).map(|k| (log.times[k], err[k].ln())).collect();
            if let Some((slope, r2)) = linear_fit(&pts) {
                if slope < 0.0 {
                    out.rate = Some(-slope);
                    out.r_squared = Some(r2);
                }
            }
            out
        })
        .collect();
    ConvergenceReport {
        threshold,
        all_converged: agents.iter().all(|a| a.converged),
        agents,
        scenario_digest: log.scenario_digest.clone(),
    }
}

/// Slope and coefficient of determination of an ordinary least-squares line.
pub fn linear_fit(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some((slope, r2))
}

// ---- equilibria ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    /// Perturbation angle, rad.
    pub perturbation: f64,
    pub trials: usize,
    /// Window for escape and for entering the identity's basin, s.
    pub horizon: f64,
    /// Total simulated time per trial when checking the final error, s.
    pub settle_horizon: f64,
    pub dt: f64,
    /// Frobenius error counted as back at identity.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { perturbation: 1e-3, trials: 20, horizon: 20.0, settle_horizon: 60.0, dt: 1e-3, threshold: 1e-6, seed: 7 }
    }
}

/// Fraction of a critical value the error function must fall below to count as escaped.
pub const ESCAPE_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointReport {
    pub kind: CriticalKind,
    /// Offset `R_i R_1^T`, row-major.
    pub offset: [f64; 9],
    /// Predicted error function value.
    pub phi: f64,
    /// Error function measured at the point.
    pub phi_measured: f64,
    /// `||e||` at the point with zero angular velocity.
    pub residual: f64,
    pub trials: usize,
    /// Trials whose error function fell below 99 % of its critical value within the horizon.
    pub escaped: usize,
    /// Trials whose energy `phi + |w|^2 / 2` fell below 99 % of the lowest
    /// undesired critical value within the horizon. The energy cannot increase
    /// while upstream agents are aligned, so such a trajectory can only settle
    /// at identity.
    pub entered_basin: usize,
    /// Trials below the Frobenius threshold by the settle horizon.
    pub converged: usize,
    pub max_escape_time: Option<f64>,
    pub max_basin_time: Option<f64>,
    pub max_convergence_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub agent: usize,
    pub eigenvalues: [f64; 3],
    pub perturbation: f64,
    pub horizon: f64,
    pub settle_horizon: f64,
    pub points: Vec<PointReport>,
}

impl EquilibriumReport {
    /// One attracting minimum and three points every perturbation leaves for identity.
    pub fn structure_confirmed(&self) -> bool {
        self.points.iter().all(|p| {
            let settled = p.entered_basin == p.trials && p.converged == p.trials;
            match p.kind {
                CriticalKind::Minimum => settled,
                _ => settled && p.escaped == p.trials,
            }
        })
    }
}

/// The agents that influence agent `i`, with agent 3 kept when it stands in
/// for the landmarks.
fn truncated(s: &Scenario, i: usize) -> Scenario {
    let keep = if s.landmark_mode == LandmarkMode::None { i.max(3) } else { i };
    let mut t = s.clone();
    t.agents.truncate(keep);
    t.graph.n = keep;
    t.graph.edges.retain(|&(a, b)| a <= keep && b <= keep);
    t
}

#[derive(Debug, Clone, Copy, Default)]
struct TrialOutcome {
    escape: Option<f64>,
    basin: Option<f64>,
    converged: Option<f64>,
}

/// Places agent `agent` at each critical point of its error function with
/// every upstream agent aligned to the leader, checks the residual, then
/// perturbs and simulates to see whether it leaves and settles at alignment.
pub fn equilibrium_probe(s: &Scenario, agent: usize, opts: ProbeOptions) -> Result<EquilibriumReport> {
    if agent < 2 || agent > s.n_agents() {
        return Err(Error::InvalidArgument(format!(
            "agent {agent} has no alignment law (choose 2..={})",
            s.n_agents()
        )));
    }
    let k = scenario_k_matrix(s, agent)?;
    let points = classify_critical_points(&k)?;
    let basin_level = ESCAPE_FRACTION * points[1..].iter().map(|p| p.phi).fold(f64::INFINITY, f64::min);
    let mut sub = truncated(s, agent);
    sub.integration.dt = opts.dt;
    sub.integration.t_end = opts.settle_horizon.max(opts.horizon);
    let sim = Simulator::new(&sub)?;
    let r1 = sub.agents[0].initial_orientation;

    let reports = points
        .iter()
        .enumerate()
        .map(|(n, p)| {
            let r_i = p.offset.compose(&r1);
            let mut base: Vec<AgentState> = vec![AgentState::at_rest(r1); sub.n_agents()];
            base[agent - 1] = AgentState::at_rest(r_i);
            let sets = measure_all(&sub, &base)?;
            let terms = agent_terms(&sub, &sets, agent)?;
            let residual = error_vector(&terms).norm();
            let phi_measured = error_function(&terms);

            let outcomes: Vec<TrialOutcome> = (0..opts.trials)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                    rng.set_stream((n * opts.trials + trial) as u64);
                    let kick = exp_so3(random_unit(&mut rng) * opts.perturbation);
                    let mut start = base.clone();
                    start[agent - 1].r = r_i.compose(&kick);
                    probe_trial(&sim, agent, SystemState { t: 0.0, states: start }, p.phi, basin_level, opts)
                })
                .collect::<Result<_>>()?;
            let escaped = if p.phi > 0.0 { outcomes.iter().filter(|o| o.escape.is_some()).count() } else { 0 };
            Ok(PointReport {
                kind: p.kind,
                offset: p.offset.matrix().to_row_major(),
                phi: p.phi,
                phi_measured,
                residual,
                trials: opts.trials,
                escaped,
                entered_basin: outcomes.iter().filter(|o| o.basin.is_some()).count(),
                converged: outcomes.iter().filter(|o| o.converged.is_some()).count(),
                max_escape_time: outcomes.iter().filter_map(|o| o.escape).reduce(f64::max),
                max_basin_time: outcomes.iter().filter_map(|o| o.basin).reduce(f64::max),
                max_convergence_time: outcomes.iter().filter_map(|o| o.converged).reduce(f64::max),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EquilibriumReport {
        agent,
        eigenvalues: k.values(),
        perturbation: opts.perturbation,
        horizon: opts.horizon,
        settle_horizon: opts.settle_horizon,
        points: reports,
    })
}

fn probe_trial(
    sim: &Simulator,
    agent: usize,
    start: SystemState,
    phi_crit: f64,
    basin_level: f64,
    opts: ProbeOptions,
) -> Result<TrialOutcome> {
    let n_steps = crate::simulator::steps_for(opts.settle_horizon.max(opts.horizon), opts.dt);
    let s = sim.scenario();
    let r1 = start.states[0].r;
    let mut state = start;
    let mut out = TrialOutcome::default();
    for k in 0..=n_steps {
        let t = state.t;
        if t <= opts.horizon && (out.escape.is_none() || out.basin.is_none()) {
            let sets = measure_all(s, &state.states)?;
            let phi = error_function(&agent_terms(s, &sets, agent)?);
            if out.escape.is_none() && phi < ESCAPE_FRACTION * phi_crit {
                out.escape = Some(t);
            }
            let energy = phi + 0.5 * state.states[agent - 1].w.norm_squared();
            if out.basin.is_none() && energy < basin_level {
                out.basin = Some(t);
            }
        }
        if frobenius_error(&state.states[agent - 1].r, &r1) < opts.threshold {
            out.converged = Some(t);
            break;
        }
        if k == n_steps {
            break;
        }
        state = sim.step(&state, opts.dt)?;
        state.t = (k + 1) as f64 * opts.dt;
    }
    Ok(out)
}

/// Holds the agent exactly at `offset` with zero velocity and reports the
/// largest drift of its error function over the horizon.
pub fn equilibrium_hold(s: &Scenario, agent: usize, offset: &Rotation, horizon: f64, dt: f64) -> Result<f64> {
    let mut sub = truncated(s, agent);
    sub.integration.dt = dt;
    sub.integration.t_end = horizon;
    let sim = Simulator::new(&sub)?;
    let r1 = sub.agents[0].initial_orientation;
    let mut states = vec![AgentState::at_rest(r1); sub.n_agents()];
    states[agent - 1] = AgentState::at_rest(offset.compose(&r1));
    let phi = |st: &[AgentState]| -> Result<f64> {
        let sets = measure_all(&sub, st)?;
        Ok(error_function(&agent_terms(&sub, &sets, agent)?))
    };
    let phi0 = phi(&states)?;
    let mut state = SystemState { t: 0.0, states };
    let mut drift: f64 = 0.0;
    for _ in 0..crate::simulator::steps_for(horizon, dt) {
        state = sim.step(&state, dt)?;
        drift = drift.max((phi(&state.states)? - phi0).abs());
    }
    Ok(drift)
}

// ---- Lyapunov audit ----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovAudit {
    pub agent: usize,
    pub k_v: f64,
    pub samples: usize,
    /// Largest increase of V between consecutive samples.
    pub max_increase: f64,
    /// Fraction of sample intervals where V did not decrease, counting only
    /// intervals that start with V above `floor`.
    pub nondecreasing_fraction: f64,
    /// Intervals whose increase exceeds `tolerance`.
    pub violations: usize,
    pub tolerance: f64,
    pub floor: f64,
}

pub fn lyapunov_audit(log: &TrajectoryLog, agent: usize, tolerance: f64) -> LyapunovAudit {
    let floor = 1e-12;
    let v = log.series(agent, |a| a.v);
    let mut max_increase: f64 = 0.0;
    let mut counted = 0usize;
    let mut nondecreasing = 0usize;
    let mut violations = 0usize;
    for w in v.windows(2) {
        let d = w[1] - w[0];
        max_increase = max_increase.max(d);
        if d > tolerance {
            violations += 1;
        }
        if w[0] > floor {
            counted += 1;
            if d >= 0.0 {
                nondecreasing += 1;
            }
        }
    }
    LyapunovAudit {
        agent,
        k_v: log.k_v[agent - 1],
        samples: v.len(),
        max_increase,
        nondecreasing_fraction: if counted == 0 { 0.0 } else { nondecreasing as f64 / counted as f64 },
        violations,
        tolerance,
        floor,
    }
}

// ---- gain / spread sweep ----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IssRow {
    pub target_spread: f64,
    /// Largest spread actually achieved over the followers.
    pub achieved_spread: f64,
    pub gain_scale: f64,
    pub trials: usize,
    pub converged: usize,
    pub fraction: f64,
    pub mean_convergence_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IssTable {
    pub seed: u64,
    pub t_end: f64,
    pub rows: Vec<IssRow>,
}

/// Gains for every follower (and agent 2 when it has a completion direction)
/// that bring its spread as close to `target` as the geometry allows.
pub fn design_scenario_gains(s: &Scenario, target: f64) -> Result<(Scenario, f64)> {
    let identity = vec![AgentState::at_rest(Rotation::IDENTITY); s.n_agents()];
    let sets = measure_all(s, &identity)?;
    let mut out = s.clone();
    let mut achieved: f64 = 0.0;
    let first = if s.landmark_mode == LandmarkMode::Multi { 3 } else { 2 };
    for i in first..=s.n_agents() {
        let design = match design_gains(i, &sets[i - 1], target, &s.gains) {
            Ok(d) => d,
            Err(Error::SearchFailed { best_spread, .. }) => {
                log::info!("agent {i}: spread {target} unreachable, using {best_spread:.4}");
                design_gains(i, &sets[i - 1], best_spread + 1e-9, &s.gains)?
            }
            Err(e) => return Err(e),
        };
        achieved = achieved.max(design.spread);
        apply_design(&mut out.gains, &design);
    }
    Ok((out, achieved))
}

/// Monte Carlo convergence fraction over a grid of spectral spreads and gain scales.
pub fn iss_gain_experiment(
    s: &Scenario,
    spread_values: &[f64],
    gain_scales: &[f64],
    trials: usize,
    seed: u64,
    opts: MonteCarloOptions,
) -> Result<IssTable> {
    let mut rows = Vec::new();
    for &target in spread_values {
        let (designed, achieved) = design_scenario_gains(s, target)?;
        for &scale in gain_scales {
            let mut scaled = designed.clone();
            for i in 2..=scaled.n_agents() {
                let keys = scaled.gain_keys(i);
                scaled.gains.scale_agent(i, &keys, scale);
            }
            let mc: MonteCarloSummary = monte_carlo(&scaled, trials, seed, opts)?;
            rows.push(IssRow {
                target_spread: target,
                achieved_spread: achieved,
                gain_scale: scale,
                trials,
                converged: mc.converged,
                fraction: mc.fraction,
                mean_convergence_time: mc.mean_convergence_time,
            });
        }
    }
    Ok(IssTable { seed, t_end: opts.t_end, rows })
}
