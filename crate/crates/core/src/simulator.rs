//! Fixed-step integration of the closed-loop network and trajectory logging.
//!
//! Each step is classical RK4 on the ambient 3x3 matrices and angular
//! velocities, followed by a polar projection of every follower back onto
//! SO(3). The leader is never integrated, so its orientation is bit-exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::{
    error_function, error_vector, gain_bounds, haar_rotation, random_unit, received_cross, scenario_k_matrix,
    unforced_terms, ErrorTerm,
};
use crate::error::{Error, Result};
use crate::scenario::{validate_scenario, GainKey, Scenario};
use crate::sensing::{measure_all, AgentState, Target};
use crate::so3::{exp_so3, frobenius_error, hat, project_to_so3, Matrix3, Rotation, Vector3};

/// Frobenius alignment error below which an agent counts as converged.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-6;
/// Consecutive steps above the divergence level before a run is aborted.
const DIVERGENCE_STEPS: usize = 1000;
const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    /// seconds
    pub t: f64,
    /// Index `k` holds agent `k + 1`.
    pub states: Vec<AgentState>,
}

/// Time derivative of the full state: `(dR/dt, dw/dt)` per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub rates: Vec<(Matrix3, Vector3)>,
}

/// Where one side of an error pair comes from.
#[derive(Debug, Clone, Copy)]
enum Source {
    /// `normalize(M_agent^T g)` for a fixed global direction `g`.
    Fixed { agent: usize, global: Vector3 },
    /// Normalized cross of two fixed directions seen by two different agents.
    Crossed { a: usize, ga: Vector3, b: usize, gb: Vector3 },
}

#[derive(Debug, Clone)]
struct PlanTerm {
    gain: f64,
    own: Vector3,
    other: Source,
}

/// Per-agent error terms compiled against the stationary geometry.
#[derive(Debug, Clone)]
struct Plan {
    /// Index `k` holds agent `k + 1`; empty for the leader.
    agents: Vec<Vec<PlanTerm>>,
}

fn body(m: &Matrix3, g: Vector3) -> Vector3 {
    let v = m.transpose_mul_vec(g);
    v * (1.0 / v.norm())
}

impl Plan {
    fn compile(s: &Scenario) -> Result<Plan> {
        let n = s.n_agents();
        let identity = vec![AgentState::at_rest(Rotation::IDENTITY); n];
        let sets = measure_all(s, &identity)?;
        let mut agents = vec![Vec::new(); n];
        if n < 2 {
            return Ok(Plan { agents });
        }
        let (m1, m2) = (&sets[0], &sets[1]);
        let mut t2 = vec![PlanTerm {
            gain: s.gains.get(2, &GainKey::Agent(1)),
            own: m2.bearings[&1].vector(),
            other: Source::Fixed { agent: 1, global: m1.bearings[&2].vector() },
        }];
        for (target, n2) in &m2.normals {
            let key = match target {
                Target::Agent(j) => GainKey::Agent(*j),
                Target::Landmark(x) => GainKey::Landmark(x.clone()),
            };
            t2.push(PlanTerm {
                gain: s.gains.get(2, &key),
                own: n2.vector(),
                other: Source::Fixed { agent: 1, global: m1.normals[target].vector() },
            });
        }
        if let (Some(v2), Some(v1)) = (m2.virtual_direction, m1.virtual_direction) {
            t2.push(PlanTerm {
                gain: s.gains.get(2, &GainKey::Virtual),
                own: v2.vector(),
                other: Source::Fixed { agent: 1, global: v1.vector() },
            });
        }
        agents[1] = t2;
        for i in 3..=n {
            let nb = s.graph.neighbors(i);
            let own = &sets[i - 1];
            let mut terms: Vec<PlanTerm> = nb
                .iter()
                .map(|&j| PlanTerm {
                    gain: s.gains.get(i, &GainKey::Agent(j)),
                    own: own.bearings[&j].vector(),
                    other: Source::Fixed { agent: j, global: sets[j - 1].bearings[&i].vector() },
                })
                .collect();
            let (j, k) = (nb[0], nb[1]);
            terms.push(PlanTerm {
                gain: s.gains.get(i, &GainKey::Virtual),
                own: own.virtual_direction.expect("follower has a virtual direction").vector(),
                other: Source::Crossed {
                    a: k,
                    ga: sets[k - 1].bearings[&i].vector(),
                    b: j,
                    gb: sets[j - 1].bearings[&i].vector(),
                },
            });
            agents[i - 1] = terms;
        }
        Ok(Plan { agents })
    }

    /// Error terms of agent `i` for raw (possibly slightly non-orthogonal) matrices.
    fn terms(&self, i: usize, mats: &[Matrix3]) -> Result<Vec<ErrorTerm>> {
        self.agents[i - 1]
            .iter()
            .map(|t| {
                let other = match t.other {
                    Source::Fixed { agent, global } => body(&mats[agent - 1], global),
                    Source::Crossed { a, ga, b, gb } => {
                        received_cross(body(&mats[a - 1], ga), body(&mats[b - 1], gb)).ok_or_else(|| {
                            Error::DegenerateCross { context: format!("agent {i} received bearings"), norm: 0.0 }
                        })?
                    }
                };
                Ok(ErrorTerm { key: GainKey::Virtual, gain: t.gain, own: body(&mats[i - 1], t.own), other })
            })
            .collect()
    }

    fn error(&self, i: usize, mats: &[Matrix3]) -> Result<Vector3> {
        let mut e = Vector3::ZERO;
        for t in &self.agents[i - 1] {
            let own = body(&mats[i - 1], t.own);
            let other = match t.other {
                Source::Fixed { agent, global } => body(&mats[agent - 1], global),
                Source::Crossed { a, ga, b, gb } => {
                    received_cross(body(&mats[a - 1], ga), body(&mats[b - 1], gb)).ok_or_else(|| {
                        Error::DegenerateCross { context: format!("agent {i} received bearings"), norm: 0.0 }
                    })?
                }
            };
            e += other.cross(own) * t.gain;
        }
        Ok(e)
    }
}

/// Per-agent quantities recorded at a sample time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgentSample {
    pub r: Matrix3,
    pub w: Vector3,
    /// `||I - R_i^T R_1||_F`
    pub err_frob: f64,
    /// Error function against leader-aligned neighbors.
    pub phi: f64,
    /// Norm of the error vector that drives the control law.
    pub e_norm: f64,
    /// Lyapunov function `phi + |w|^2/2 + k_V (e_bar . w)`.
    pub v: f64,
    /// Norm of the upstream disturbance `e_bar - e`; not stored in CSV.
    pub h_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryLog {
    pub n_agents: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    /// `samples[k][a]` is agent `a + 1` at `times[k]`.
    pub samples: Vec<Vec<AgentSample>>,
    pub final_time: f64,
    /// Diagnostics of the final state, whether or not it was sampled.
    pub terminal: Vec<AgentSample>,
    /// Cross-term weights used for `v`, per agent.
    pub k_v: Vec<f64>,
    pub scenario_digest: String,
}

impl TrajectoryLog {
    /// Time series of one agent's quantity.
    pub fn series(&self, agent: usize, f: impl Fn(&AgentSample) -> f64) -> Vec<f64> {
        self.samples.iter().map(|row| f(&row[agent - 1])).collect()
    }

    pub fn terminal_errors(&self) -> Vec<f64> {
        self.terminal.iter().map(|a| a.err_frob).collect()
    }
}

/// Knobs for [`Simulator::run_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Record samples every `log_stride` steps.
    pub record: bool,
    /// Stop once every agent is below this Frobenius error.
    pub stop_below: Option<f64>,
    pub check_divergence: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { record: true, stop_below: None, check_divergence: true }
    }
}

/// Compiled closed-loop system for one validated scenario.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    plan: Plan,
    k_v: Vec<f64>,
}

impl Simulator {
    pub fn new(s: &Scenario) -> Result<Self> {
        validate_scenario(s).into_result()?;
        let plan = Plan::compile(s)?;
        let k_omega = s.gains.k_omega;
        let mut k_v = vec![0.0; s.n_agents()];
        for (i, slot) in k_v.iter_mut().enumerate().skip(1) {
            let k = scenario_k_matrix(s, i + 1)?;
            *slot = 0.5 * gain_bounds(&k, k_omega).k_v_max();
        }
        Ok(Self { scenario: s.clone(), plan, k_v })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn k_v(&self) -> &[f64] {
        &self.k_v
    }

    pub fn initial_state(&self) -> SystemState {
        SystemState {
            t: 0.0,
            states: self
                .scenario
                .agents
                .iter()
                .map(|a| AgentState { r: a.initial_orientation, w: a.initial_angular_velocity })
                .collect(),
        }
    }

    fn rates(&self, mats: &[Matrix3], ws: &[Vector3], out: &mut [(Matrix3, Vector3)]) -> Result<()> {
        let k_omega = self.scenario.gains.k_omega;
        out[0] = (Matrix3::ZERO, Vector3::ZERO);
        for i in 2..=mats.len() {
            let e = self.plan.error(i, mats)?;
            let w = ws[i - 1];
            out[i - 1] = (mats[i - 1] * hat(w), -(w * k_omega) - e);
        }
        Ok(())
    }

    pub fn derivative(&self, s: &SystemState) -> Result<Derivative> {
        let mats: Vec<Matrix3> = s.states.iter().map(|a| *a.r.matrix()).collect();
        let ws: Vec<Vector3> = s.states.iter().map(|a| a.w).collect();
        let mut rates = vec![(Matrix3::ZERO, Vector3::ZERO); mats.len()];
        self.rates(&mats, &ws, &mut rates)?;
        Ok(Derivative { rates })
    }

    /// One RK4 step of size `dt` with projection of every follower.
    pub fn step(&self, s: &SystemState, dt: f64) -> Result<SystemState> {
        self.step_at(s, dt, s.t + dt)
    }

    fn step_at(&self, s: &SystemState, dt: f64, t_next: f64) -> Result<SystemState> {
        let (mats, ws) = self.rk4_raw(s, dt)?;
        let mut states = s.states.clone();
        for i in 1..states.len() {
            if !mats[i].is_finite() || !ws[i].is_finite() {
                return Err(Error::NonFinite { t: t_next });
            }
            let r = project_to_so3(&mats[i]).map_err(|_| Error::NonFinite { t: t_next })?;
            states[i] = AgentState { r, w: ws[i] };
        }
        Ok(SystemState { t: t_next, states })
    }

    /// Unprojected RK4 update.
    fn rk4_raw(&self, s: &SystemState, dt: f64) -> Result<(Vec<Matrix3>, Vec<Vector3>)> {
        let n = s.states.len();
        let m0: Vec<Matrix3> = s.states.iter().map(|a| *a.r.matrix()).collect();
        let w0: Vec<Vector3> = s.states.iter().map(|a| a.w).collect();
        let mut k = [
            vec![(Matrix3::ZERO, Vector3::ZERO); n],
            vec![(Matrix3::ZERO, Vector3::ZERO); n],
            vec![(Matrix3::ZERO, Vector3::ZERO); n],
            vec![(Matrix3::ZERO, Vector3::ZERO); n],
        ];
        let stage = |c: f64, k: &[(Matrix3, Vector3)]| -> (Vec<Matrix3>, Vec<Vector3>) {
            let m = m0.iter().zip(k).map(|(m, d)| *m + d.0 * c).collect();
            let w = w0.iter().zip(k).map(|(w, d)| *w + d.1 * c).collect();
            (m, w)
        };
        self.rates(&m0, &w0, &mut k[0])?;
        let (m, w) = stage(0.5 * dt, &k[0]);
        self.rates(&m, &w, &mut k[1])?;
        let (m, w) = stage(0.5 * dt, &k[1]);
        self.rates(&m, &w, &mut k[2])?;
        let (m, w) = stage(dt, &k[2]);
        self.rates(&m, &w, &mut k[3])?;
        let h = dt / 6.0;
        let mats = (0..n).map(|a| m0[a] + (k[0][a].0 + k[1][a].0 * 2.0 + k[2][a].0 * 2.0 + k[3][a].0) * h).collect();
        let ws = (0..n).map(|a| w0[a] + (k[0][a].1 + k[1][a].1 * 2.0 + k[2][a].1 * 2.0 + k[3][a].1) * h).collect();
        Ok((mats, ws))
    }

    /// Largest `||R^T R - I||_F` over followers after an RK4 step, before projection.
    pub fn drift_before_projection(&self, s: &SystemState, dt: f64) -> Result<f64> {
        let (mats, _) = self.rk4_raw(s, dt)?;
        Ok(mats.iter().skip(1).map(|m| (m.transpose() * *m - Matrix3::IDENTITY).frobenius_norm()).fold(0.0, f64::max))
    }

    /// Error function of every agent with the actual received messages (leader 0).
    fn actual_phis(&self, s: &SystemState) -> Result<Vec<f64>> {
        let mats: Vec<Matrix3> = s.states.iter().map(|a| *a.r.matrix()).collect();
        let mut out = vec![0.0; mats.len()];
        for (i, slot) in out.iter_mut().enumerate().skip(1) {
            *slot = error_function(&self.plan.terms(i + 1, &mats)?);
        }
        Ok(out)
    }

    /// Sampled quantities for every agent at state `s`.
    pub fn diagnostics(&self, s: &SystemState) -> Result<Vec<AgentSample>> {
        let mats: Vec<Matrix3> = s.states.iter().map(|a| *a.r.matrix()).collect();
        let r1 = s.states[0].r;
        s.states
            .iter()
            .enumerate()
            .map(|(k, st)| {
                let i = k + 1;
                let err_frob = frobenius_error(&st.r, &r1);
                if i == 1 {
                    return Ok(AgentSample {
                        r: mats[0],
                        w: st.w,
                        err_frob,
                        phi: 0.0,
                        e_norm: 0.0,
                        v: 0.0,
                        h_norm: Some(0.0),
                    });
                }
                let e = self.plan.error(i, &mats)?;
                let bar = unforced_terms(&self.scenario, &s.states, i)?;
                let e_bar = error_vector(&bar);
                let phi = error_function(&bar);
                Ok(AgentSample {
                    r: mats[k],
                    w: st.w,
                    err_frob,
                    phi,
                    e_norm: e.norm(),
                    v: phi + 0.5 * st.w.norm_squared() + self.k_v[k] * e_bar.dot(st.w),
                    h_norm: Some((e_bar - e).norm()),
                })
            })
            .collect()
    }

    pub fn run(&self) -> Result<TrajectoryLog> {
        self.run_with(RunOptions::default())
    }

    pub fn run_with(&self, opts: RunOptions) -> Result<TrajectoryLog> {
        self.run_from(self.initial_state(), opts)
    }

    /// Integrates from `start` (at time 0) to `t_end` and logs every `log_stride` steps.
    pub fn run_from(&self, start: SystemState, opts: RunOptions) -> Result<TrajectoryLog> {
        let ig = self.scenario.integration;
        let dt = ig.dt;
        let n_steps = steps_for(ig.t_end, dt);
        let stride = ig.log_stride.max(1);
        let n = self.scenario.n_agents();

        let mut state = SystemState { t: 0.0, ..start };
        let mut times = Vec::new();
        let mut samples = Vec::new();
        let phi0 = if opts.check_divergence { self.actual_phis(&state)? } else { Vec::new() };
        let limits: Vec<f64> = phi0.iter().map(|p| (DIVERGENCE_FACTOR * p).max(DIVERGENCE_FLOOR)).collect();
        let mut above = vec![0usize; n];

        let mut k = 0usize;
        loop {
            if opts.record && n_steps > 0 && k.is_multiple_of(stride) {
                times.push(state.t);
                samples.push(self.diagnostics(&state)?);
            }
            if k == n_steps {
                break;
            }
            if let Some(tol) = opts.stop_below {
                let r1 = state.states[0].r;
                if state.states.iter().all(|a| frobenius_error(&a.r, &r1) < tol) {
                    break;
                }
            }
            state = self.step_at(&state, dt, (k + 1) as f64 * dt)?;
            k += 1;
            if opts.check_divergence {
                for (i, phi) in self.actual_phis(&state)?.into_iter().enumerate().skip(1) {
                    if phi > limits[i] {
                        above[i] += 1;
                        if above[i] >= DIVERGENCE_STEPS {
                            return Err(Error::Diverged { agent: i + 1, t: state.t });
                        }
                    } else {
                        above[i] = 0;
                    }
                }
            }
        }
        log::debug!("run finished at t = {} after {k} steps", state.t);
        Ok(TrajectoryLog {
            n_agents: n,
            dt,
            times,
            samples,
            final_time: state.t,
            terminal: self.diagnostics(&state)?,
            k_v: self.k_v.clone(),
            scenario_digest: self.scenario.digest(),
        })
    }
}

/// Number of steps of size `dt` covering `[0, t_end]`.
pub fn steps_for(t_end: f64, dt: f64) -> usize {
    let n = t_end / dt;
    // tolerate representation error in t_end / dt
    let r = n.round();
    if (n - r).abs() < 1e-9 * r.max(1.0) {
        r as usize
    } else {
        n.ceil() as usize
    }
}

/// Full-state derivative for a validated scenario.
pub fn derivative(s: &SystemState, scenario: &Scenario) -> Result<Derivative> {
    Simulator::new(scenario)?.derivative(s)
}

/// One integration step.
pub fn step(s: &SystemState, dt: f64, scenario: &Scenario) -> Result<SystemState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    Simulator::new(scenario)?.step(s, dt)
}

/// Integrates the scenario to its final time.
pub fn run(scenario: &Scenario) -> Result<TrajectoryLog> {
    Simulator::new(scenario)?.run()
}

// ---- Monte Carlo ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloOptions {
    pub t_end: f64,
    pub dt: f64,
    pub threshold: f64,
    /// Each component of a follower's initial angular velocity is uniform in `[-w_max, w_max]`.
    pub w_max: f64,
    /// Draw offsets from the leader within this angle instead of Haar-uniform orientations.
    pub max_initial_angle: Option<f64>,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self { t_end: 60.0, dt: 1e-3, threshold: CONVERGENCE_THRESHOLD, w_max: 0.1, max_initial_angle: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub converged: bool,
    /// Time at which every agent was below the threshold.
    pub convergence_time: Option<f64>,
    pub max_terminal_error: f64,
    /// Set when the run itself failed.
    pub failure: Option<String>,
    /// Initial orientations, row-major, for inspecting non-converged trials.
    pub initial_orientations: Option<Vec<[f64; 9]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub seed: u64,
    pub t_end: f64,
    pub dt: f64,
    pub threshold: f64,
    pub converged: usize,
    pub fraction: f64,
    pub mean_convergence_time: Option<f64>,
    pub max_convergence_time: Option<f64>,
    pub results: Vec<TrialResult>,
}

/// Initial condition of one trial: every agent gets a Haar-uniform orientation
/// and every follower a small random angular velocity.
pub fn random_initial_state(s: &Scenario, seed: u64, trial: usize, opts: &MonteCarloOptions) -> SystemState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let w_max = opts.w_max;
    let r1 = haar_rotation(&mut rng);
    let states = (0..s.n_agents())
        .map(|k| {
            let r = match (k, opts.max_initial_angle) {
                (0, _) => r1,
                (_, Some(a)) => exp_so3(random_unit(&mut rng) * (a * rng.random::<f64>())).compose(&r1),
                (_, None) => haar_rotation(&mut rng),
            };
            let w = if k == 0 {
                Vector3::ZERO
            } else {
                let mut c = || w_max * (2.0 * rng.random::<f64>() - 1.0);
                Vector3::new(c(), c(), c())
            };
            AgentState { r, w }
        })
        .collect();
    SystemState { t: 0.0, states }
}

/// Runs `trials` independent simulations from random initial conditions.
pub fn monte_carlo(s: &Scenario, trials: usize, seed: u64, opts: MonteCarloOptions) -> Result<MonteCarloSummary> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    let mut base = s.clone();
    base.integration.t_end = opts.t_end;
    base.integration.dt = opts.dt;
    let sim = Simulator::new(&base)?;

    let results: Vec<TrialResult> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let start = random_initial_state(&base, seed, trial, &opts);
            let initial: Vec<[f64; 9]> = start.states.iter().map(|a| a.r.matrix().to_row_major()).collect();
            match run_trial(&sim, start, opts) {
                Ok((max_err, t_conv)) => {
                    let converged = max_err < opts.threshold;
                    TrialResult {
                        trial,
                        converged,
                        convergence_time: t_conv.filter(|_| converged),
                        max_terminal_error: max_err,
                        failure: None,
                        initial_orientations: (!converged).then_some(initial),
                    }
                }
                Err(e) => TrialResult {
                    trial,
                    converged: false,
                    convergence_time: None,
                    max_terminal_error: f64::NAN,
                    failure: Some(e.to_string()),
                    initial_orientations: Some(initial),
                },
            }
        })
        .collect();

    for r in results.iter().filter(|r| !r.converged) {
        log::warn!(
            "trial {} did not converge (terminal error {:.3e}{})",
            r.trial,
            r.max_terminal_error,
            r.failure.as_deref().map(|f| format!(", {f}")).unwrap_or_default()
        );
    }
    let converged = results.iter().filter(|r| r.converged).count();
    let times: Vec<f64> = results.iter().filter_map(|r| r.convergence_time).collect();
    Ok(MonteCarloSummary {
        trials,
        seed,
        t_end: opts.t_end,
        dt: opts.dt,
        threshold: opts.threshold,
        converged,
        fraction: converged as f64 / trials as f64,
        mean_convergence_time: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
        max_convergence_time: times.iter().copied().reduce(f64::max),
        results,
    })
}

/// Returns the terminal max error and the last time the max error crossed below the threshold.
fn run_trial(sim: &Simulator, start: SystemState, opts: MonteCarloOptions) -> Result<(f64, Option<f64>)> {
    let n_steps = steps_for(opts.t_end, opts.dt);
    let stop = opts.threshold * 1e-3;
    let mut state = start;
    let max_err = |s: &SystemState| {
        let r1 = s.states[0].r;
        s.states.iter().map(|a| frobenius_error(&a.r, &r1)).fold(0.0, f64::max)
    };
    let mut err = max_err(&state);
    let mut t_conv = (err < opts.threshold).then_some(0.0);
    for k in 0..n_steps {
        if err < stop {
            break;
        }
        state = sim.step_at(&state, opts.dt, (k + 1) as f64 * opts.dt)?;
        err = max_err(&state);
        if err >= opts.threshold {
            t_conv = None;
        } else if t_conv.is_none() {
            t_conv = Some(state.t);
        }
    }
    Ok((err, t_conv))
}
