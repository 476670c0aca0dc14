//! Scenario definition, JSON schema and validation of the network geometry.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eigen::sym_eigen3;
use crate::error::{Error, Result};
use crate::so3::{rot_x, rot_y, rot_z, Matrix3, Rotation, Vector3};

/// Points closer than this are considered collocated.
pub const COLLOCATION_TOL: f64 = 1e-9;
/// `collinearity_measure` below this fails validation.
pub const COLLINEARITY_TOL: f64 = 1e-6;
/// `coplanarity_measure` below this fails validation.
pub const COPLANARITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    /// 1-based.
    pub id: usize,
    pub position: Vector3,
    pub initial_orientation: Rotation,
    /// rad/s, body frame.
    pub initial_angular_velocity: Vector3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkSpec {
    pub id: String,
    pub position: Vector3,
}

/// Directed leader-follower graph. `(i, j)` in `edges` means agent `i`
/// measures agent `j` and receives its data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SensingGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub landmark_edges: Vec<(usize, String)>,
}

impl SensingGraph {
    /// Out-neighbors of `i`, ascending.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = self.edges.iter().filter(|e| e.0 == i).map(|e| e.1).collect();
        set.into_iter().collect()
    }

    /// Agents that list `j` as a neighbor, ascending.
    pub fn dependents(&self, j: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = self.edges.iter().filter(|e| e.1 == j).map(|e| e.0).collect();
        set.into_iter().collect()
    }

    pub fn landmarks_of(&self, agent: usize) -> BTreeSet<&str> {
        self.landmark_edges.iter().filter(|e| e.0 == agent).map(|e| e.1.as_str()).collect()
    }
}

/// Target of a gain: a neighbor agent, a landmark normal, or the synthesized
/// third direction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GainKey {
    Agent(usize),
    Landmark(String),
    Virtual,
}

impl fmt::Display for GainKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GainKey::Agent(j) => write!(f, "agent:{j}"),
            GainKey::Landmark(x) => write!(f, "landmark:{x}"),
            GainKey::Virtual => f.write_str("virtual"),
        }
    }
}

impl FromStr for GainKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "virtual" {
            return Ok(GainKey::Virtual);
        }
        if let Some(rest) = s.strip_prefix("agent:") {
            return rest
                .parse()
                .map(GainKey::Agent)
                .map_err(|_| Error::Parse(format!("bad agent id in gain target '{s}'")));
        }
        if let Some(rest) = s.strip_prefix("landmark:") {
            if !rest.is_empty() {
                return Ok(GainKey::Landmark(rest.to_string()));
            }
        }
        Err(Error::Parse(format!("gain target '{s}' must be 'agent:<id>', 'landmark:<id>' or 'virtual'")))
    }
}

/// Control gains. Any (agent, target) pair without an override uses `default_gain`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    pub k_omega: f64,
    pub default_gain: f64,
    pub overrides: BTreeMap<(usize, GainKey), f64>,
}

impl Default for GainTable {
    fn default() -> Self {
        Self { k_omega: 2.0, default_gain: 1.0, overrides: BTreeMap::new() }
    }
}

impl GainTable {
    pub fn get(&self, agent: usize, key: &GainKey) -> f64 {
        self.overrides.get(&(agent, key.clone())).copied().unwrap_or(self.default_gain)
    }

    pub fn set(&mut self, agent: usize, key: GainKey, gain: f64) {
        self.overrides.insert((agent, key), gain);
    }

    /// Multiplies every gain that applies to `agent` by `c`.
    pub fn scale_agent(&mut self, agent: usize, keys: &[GainKey], c: f64) {
        for key in keys {
            let g = self.get(agent, key);
            self.set(agent, key.clone(), g * c);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Integration {
    /// Step size, seconds.
    pub dt: f64,
    /// Final time, seconds.
    pub t_end: f64,
    /// Log every `log_stride` steps.
    #[serde(default = "default_stride")]
    pub log_stride: usize,
}

fn default_stride() -> usize {
    100
}

impl Default for Integration {
    fn default() -> Self {
        Self { dt: 1e-3, t_end: 30.0, log_stride: default_stride() }
    }
}

/// How agents 1 and 2 obtain the directions that complete their constraint set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LandmarkMode {
    /// One plane normal per shared landmark.
    #[default]
    Multi,
    /// Normal of the first shared landmark plus the orthogonal completion.
    Single,
    /// Agent 3 stands in for the landmark, plus the orthogonal completion.
    None,
}

impl fmt::Display for LandmarkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LandmarkMode::Multi => "multi",
            LandmarkMode::Single => "single",
            LandmarkMode::None => "none",
        })
    }
}

impl FromStr for LandmarkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi" => Ok(LandmarkMode::Multi),
            "single" => Ok(LandmarkMode::Single),
            "none" => Ok(LandmarkMode::None),
            _ => Err(Error::Parse(format!("unknown landmark mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub agents: Vec<AgentSpec>,
    pub landmarks: Vec<LandmarkSpec>,
    pub graph: SensingGraph,
    pub gains: GainTable,
    pub integration: Integration,
    pub landmark_mode: LandmarkMode,
}

/// Sources of the extra directions used by agents 1 and 2.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    Landmark(String),
    Agent(usize),
}

impl Reference {
    pub fn gain_key(&self) -> GainKey {
        match self {
            Reference::Landmark(x) => GainKey::Landmark(x.clone()),
            Reference::Agent(j) => GainKey::Agent(*j),
        }
    }
}

impl Scenario {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agent(&self, id: usize) -> &AgentSpec {
        &self.agents[id - 1]
    }

    pub fn position(&self, id: usize) -> Vector3 {
        self.agents[id - 1].position
    }

    pub fn landmark(&self, id: &str) -> Option<&LandmarkSpec> {
        self.landmarks.iter().find(|l| l.id == id)
    }

    /// Landmarks observed by both agent 1 and agent 2, in declaration order.
    pub fn shared_landmarks(&self) -> Vec<&LandmarkSpec> {
        let l1 = self.graph.landmarks_of(1);
        let l2 = self.graph.landmarks_of(2);
        self.landmarks.iter().filter(|l| l1.contains(l.id.as_str()) && l2.contains(l.id.as_str())).collect()
    }

    /// Reference points (and their positions) that agents 1 and 2 build plane
    /// normals from under the current landmark mode.
    pub fn references(&self) -> Vec<(Reference, Vector3)> {
        match self.landmark_mode {
            LandmarkMode::Multi => {
                self.shared_landmarks().into_iter().map(|l| (Reference::Landmark(l.id.clone()), l.position)).collect()
            }
            LandmarkMode::Single => self
                .shared_landmarks()
                .into_iter()
                .take(1)
                .map(|l| (Reference::Landmark(l.id.clone()), l.position))
                .collect(),
            LandmarkMode::None if self.n_agents() >= 3 => {
                vec![(Reference::Agent(3), self.position(3))]
            }
            LandmarkMode::None => Vec::new(),
        }
    }

    /// Whether agents 1 and 2 add the orthogonal completion direction.
    pub fn uses_completion(&self) -> bool {
        self.landmark_mode != LandmarkMode::Multi
    }

    /// Gain keys that enter agent `i`'s error function.
    pub fn gain_keys(&self, i: usize) -> Vec<GainKey> {
        if i == 1 {
            return Vec::new();
        }
        if i == 2 {
            let mut keys = vec![GainKey::Agent(1)];
            keys.extend(self.references().iter().map(|(r, _)| r.gain_key()));
            if self.uses_completion() {
                keys.push(GainKey::Virtual);
            }
            return keys;
        }
        let mut keys: Vec<GainKey> = self.graph.neighbors(i).into_iter().map(GainKey::Agent).collect();
        keys.push(GainKey::Virtual);
        keys
    }

    /// Sum of agent `i`'s gains.
    pub fn total_gain(&self, i: usize) -> f64 {
        self.gain_keys(i).iter().map(|k| self.gains.get(i, k)).sum()
    }

    pub fn initial_orientations(&self) -> Vec<Rotation> {
        self.agents.iter().map(|a| a.initial_orientation).collect()
    }

    pub fn from_json(s: &str) -> Result<Scenario> {
        let file: ScenarioFile = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_scenario()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from(self)).expect("scenario serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = Sha256::digest(self.to_json().as_bytes());
        bytes.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The eight-agent, two-landmark network used for the reference simulation.
    pub fn eight_agent_default() -> Scenario {
        use std::f64::consts::PI;
        let positions = [
            [0.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [1.0, -1.5, 0.5],
            [-1.0, -1.5, 0.3],
            [3.0, -1.5, 0.4],
            [1.0, -3.0, 0.6],
            [-1.0, -3.0, 0.2],
            [3.0, -3.0, 0.5],
        ];
        let orientations = [
            rot_x(PI / 6.0),
            rot_x(PI / 3.0).compose(&rot_z(PI / 6.0)),
            rot_x(2.0 * PI / 3.0),
            rot_y(PI / 6.0),
            rot_y(PI / 2.0),
            rot_y(5.0 * PI / 6.0).compose(&rot_z(PI / 6.0)),
            rot_z(PI / 6.0),
            rot_z(8.0 * PI / 9.0),
        ];
        let agents = positions
            .iter()
            .zip(orientations)
            .enumerate()
            .map(|(k, (p, r))| AgentSpec {
                id: k + 1,
                position: Vector3::from(*p),
                initial_orientation: r,
                initial_angular_velocity: Vector3::ZERO,
            })
            .collect();
        let landmarks = vec![
            LandmarkSpec { id: "x1".into(), position: Vector3::new(-0.5, 1.0, 1.0) },
            LandmarkSpec { id: "x2".into(), position: Vector3::new(2.5, 1.0, 1.2) },
        ];
        let edges = vec![
            (2, 1),
            (3, 1),
            (3, 2),
            (4, 1),
            (4, 3),
            (5, 2),
            (5, 3),
            (6, 4),
            (6, 5),
            (7, 4),
            (7, 6),
            (8, 5),
            (8, 6),
        ];
        let landmark_edges = ["x1", "x2"].iter().flat_map(|x| [(1, x.to_string()), (2, x.to_string())]).collect();
        Scenario {
            agents,
            landmarks,
            graph: SensingGraph { n: 8, edges, landmark_edges },
            gains: GainTable::default(),
            integration: Integration::default(),
            landmark_mode: LandmarkMode::Multi,
        }
    }
}

/// A single failed check.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    TooFewAgents(usize),
    NonContiguousIds,
    AgentCountMismatch { graph: usize, agents: usize },
    NonFinite(String),
    Collocated(String, String),
    CollinearWithLandmark { landmark: String, measure: f64 },
    CoplanarReferences { measure: f64 },
    InsufficientLandmarks { mode: LandmarkMode, found: usize },
    FollowerCollinear { agent: usize, neighbors: (usize, usize), measure: f64 },
    UnknownAgent(usize),
    UnknownLandmark(String),
    SelfLoop(usize),
    LeaderHasNeighbors,
    SecondAgentNeighbors(Vec<usize>),
    FollowerNeighborCount { agent: usize, count: usize },
    NonCausalNeighbor { agent: usize, neighbor: usize },
    LandmarkEdgeOnFollower { agent: usize, landmark: String },
    TriangulationNeedsAgent3,
    LeaderRotating,
    NonPositiveGain(String),
    BadIntegration(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            TooFewAgents(n) => write!(f, "network needs at least 2 agents, found {n}"),
            NonContiguousIds => f.write_str("agent ids must be 1..n in order"),
            AgentCountMismatch { graph, agents } => {
                write!(f, "graph declares {graph} agents but {agents} are listed")
            }
            NonFinite(what) => write!(f, "non-finite value in {what}"),
            Collocated(a, b) => write!(f, "collocated: {a} and {b}"),
            CollinearWithLandmark { landmark, measure } => {
                write!(f, "collinear: agents 1, 2 and landmark {landmark} (measure {measure:.3e})")
            }
            CoplanarReferences { measure } => {
                write!(f, "coplanar: agents 1, 2 and the landmarks (measure {measure:.3e})")
            }
            InsufficientLandmarks { mode, found } => {
                write!(f, "landmark mode '{mode}' needs more shared landmarks (found {found})")
            }
            FollowerCollinear { agent, neighbors, measure } => write!(
                f,
                "collinear: agent {agent} with neighbors {} and {} (measure {measure:.3e})",
                neighbors.0, neighbors.1
            ),
            UnknownAgent(i) => write!(f, "edge references unknown agent {i}"),
            UnknownLandmark(x) => write!(f, "edge references unknown landmark {x}"),
            SelfLoop(i) => write!(f, "self loop on agent {i}"),
            LeaderHasNeighbors => f.write_str("graph: agent 1 must not have agent neighbors"),
            SecondAgentNeighbors(n) => {
                write!(f, "graph: agent 2 must have exactly agent 1 as neighbor, has {n:?}")
            }
            FollowerNeighborCount { agent, count } => {
                write!(f, "graph: agent {agent} must have exactly 2 neighbors, has {count}")
            }
            NonCausalNeighbor { agent, neighbor } => {
                write!(f, "graph: neighbor {neighbor} of agent {agent} must have a smaller index")
            }
            LandmarkEdgeOnFollower { agent, landmark } => {
                write!(f, "graph: only agents 1 and 2 may observe landmarks (agent {agent} -> {landmark})")
            }
            TriangulationNeedsAgent3 => f.write_str("landmark mode 'none' needs agent 3 with neighbors {1, 2}"),
            LeaderRotating => f.write_str("agent 1 must start at rest"),
            NonPositiveGain(what) => write!(f, "gain {what} must be positive"),
            BadIntegration(what) => write!(f, "integration settings: {what}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.passed() {
            return Ok(());
        }
        let msg: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        Err(Error::InvalidScenario(msg.join("; ")))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return f.write_str("ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// `||(b-a) x (c-a)|| / (||b-a|| ||c-a||)`, 0 for collinear points and 1 for a right angle.
pub fn collinearity_measure(a: Vector3, b: Vector3, c: Vector3) -> Result<f64> {
    for (p, q, what) in [(a, b, "a, b"), (a, c, "a, c"), (b, c, "b, c")] {
        if (q - p).norm() <= COLLOCATION_TOL {
            return Err(Error::Collocated(what.into()));
        }
    }
    let u = b - a;
    let v = c - a;
    Ok((u.cross(v).norm() / (u.norm() * v.norm())).min(1.0))
}

/// Smallest over largest singular value of the centered point matrix; 0 for coplanar points.
pub fn coplanarity_measure(points: &[Vector3]) -> Result<f64> {
    if points.len() < 4 {
        return Err(Error::InvalidArgument(format!("coplanarity needs at least 4 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::ZERO, |acc, p| acc + *p) * (1.0 / n);
    let scatter = points.iter().fold(Matrix3::ZERO, |acc, p| {
        let d = *p - centroid;
        acc + d.outer(d)
    });
    let eig = sym_eigen3(&scatter);
    let largest = eig.values[2];
    if largest <= 0.0 {
        return Ok(0.0);
    }
    Ok((eig.values[0].max(0.0) / largest).sqrt())
}

/// Checks every structural and geometric precondition of the alignment laws.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut out = Vec::new();
    let n = s.agents.len();

    if n < 2 {
        out.push(Violation::TooFewAgents(n));
    }
    if s.agents.iter().enumerate().any(|(k, a)| a.id != k + 1) {
        out.push(Violation::NonContiguousIds);
    }
    if s.graph.n != n {
        out.push(Violation::AgentCountMismatch { graph: s.graph.n, agents: n });
    }
    for a in &s.agents {
        if !a.position.is_finite() || !a.initial_angular_velocity.is_finite() {
            out.push(Violation::NonFinite(format!("agent {}", a.id)));
        }
    }
    for l in &s.landmarks {
        if !l.position.is_finite() {
            out.push(Violation::NonFinite(format!("landmark {}", l.id)));
        }
    }
    if !out.is_empty() {
        return ValidationReport { violations: out };
    }

    if s.agents[0].initial_angular_velocity != Vector3::ZERO {
        out.push(Violation::LeaderRotating);
    }

    // (a) collocation, among agents and between landmarks and agents 1, 2
    for i in 0..n {
        for j in (i + 1)..n {
            if (s.agents[i].position - s.agents[j].position).norm() <= COLLOCATION_TOL {
                out.push(Violation::Collocated(format!("agent {}", i + 1), format!("agent {}", j + 1)));
            }
        }
    }

    // (e) graph shape
    let graph_ok = check_graph(s, &mut out);

    // (b), (c) geometry of agents 1, 2 and their references
    let p1 = s.position(1);
    let p2 = s.position(2);
    let shared = s.shared_landmarks();
    match s.landmark_mode {
        LandmarkMode::Multi | LandmarkMode::Single => {
            let needed = if s.landmark_mode == LandmarkMode::Multi { 2 } else { 1 };
            if shared.len() < needed {
                out.push(Violation::InsufficientLandmarks { mode: s.landmark_mode, found: shared.len() });
            }
        }
        LandmarkMode::None => {
            if n < 3 || s.graph.neighbors(3) != vec![1, 2] {
                out.push(Violation::TriangulationNeedsAgent3);
            }
        }
    }
    for (reference, pos) in s.references() {
        let name = match &reference {
            Reference::Landmark(x) => x.clone(),
            Reference::Agent(_) => continue, // covered by the follower check
        };
        match collinearity_measure(p1, p2, pos) {
            Ok(m) if m < COLLINEARITY_TOL => out.push(Violation::CollinearWithLandmark { landmark: name, measure: m }),
            Ok(_) => {}
            Err(_) => out.push(Violation::Collocated(format!("landmark {name}"), "agent 1 or 2".into())),
        }
    }
    if s.landmark_mode == LandmarkMode::Multi && shared.len() >= 2 {
        let mut pts = vec![p1, p2];
        pts.extend(shared.iter().map(|l| l.position));
        if let Ok(m) = coplanarity_measure(&pts) {
            if m < COPLANARITY_TOL {
                out.push(Violation::CoplanarReferences { measure: m });
            }
        }
    }

    // (d) each follower with its two neighbors
    if graph_ok {
        for i in 3..=n {
            let nb = s.graph.neighbors(i);
            if nb.len() != 2 {
                continue;
            }
            if let Ok(m) = collinearity_measure(s.position(i), s.position(nb[0]), s.position(nb[1])) {
                if m < COLLINEARITY_TOL {
                    out.push(Violation::FollowerCollinear { agent: i, neighbors: (nb[0], nb[1]), measure: m });
                }
            }
        }
    }

    check_gains(s, &mut out);

    let ig = &s.integration;
    if !(ig.dt > 0.0 && ig.dt.is_finite()) {
        out.push(Violation::BadIntegration(format!("dt must be positive, got {}", ig.dt)));
    }
    if !(ig.t_end >= 0.0 && ig.t_end.is_finite()) {
        out.push(Violation::BadIntegration(format!("t_end must be non-negative, got {}", ig.t_end)));
    }
    if ig.log_stride == 0 {
        out.push(Violation::BadIntegration("log_stride must be at least 1".into()));
    }

    ValidationReport { violations: out }
}

fn check_graph(s: &Scenario, out: &mut Vec<Violation>) -> bool {
    let n = s.agents.len();
    let before = out.len();
    for &(i, j) in &s.graph.edges {
        for k in [i, j] {
            if k == 0 || k > n {
                out.push(Violation::UnknownAgent(k));
            }
        }
        if i == j {
            out.push(Violation::SelfLoop(i));
        }
    }
    for (agent, x) in &s.graph.landmark_edges {
        if *agent == 0 || *agent > n {
            out.push(Violation::UnknownAgent(*agent));
        }
        if s.landmark(x).is_none() {
            out.push(Violation::UnknownLandmark(x.clone()));
        }
    }
    if out.len() > before {
        return false;
    }
    for (agent, x) in &s.graph.landmark_edges {
        if *agent > 2 {
            out.push(Violation::LandmarkEdgeOnFollower { agent: *agent, landmark: x.clone() });
        }
    }
    if !s.graph.neighbors(1).is_empty() {
        out.push(Violation::LeaderHasNeighbors);
    }
    let nb2 = s.graph.neighbors(2);
    if nb2 != vec![1] {
        out.push(Violation::SecondAgentNeighbors(nb2));
    }
    for i in 3..=n {
        let nb = s.graph.neighbors(i);
        if nb.len() != 2 {
            out.push(Violation::FollowerNeighborCount { agent: i, count: nb.len() });
        }
        for j in nb.into_iter().filter(|&j| j >= i) {
            out.push(Violation::NonCausalNeighbor { agent: i, neighbor: j });
        }
    }
    out.len() == before
}

fn check_gains(s: &Scenario, out: &mut Vec<Violation>) {
    let g = &s.gains;
    if !(g.k_omega > 0.0 && g.k_omega.is_finite()) {
        out.push(Violation::NonPositiveGain("k_omega".into()));
    }
    if !(g.default_gain > 0.0 && g.default_gain.is_finite()) {
        out.push(Violation::NonPositiveGain("default".into()));
    }
    for ((agent, key), v) in &g.overrides {
        if !(*v > 0.0 && v.is_finite()) {
            out.push(Violation::NonPositiveGain(format!("agent {agent} {key}")));
        }
    }
}

// ---- JSON file form ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    agents: Vec<AgentFile>,
    landmarks: Vec<LandmarkSpec>,
    edges: Vec<(usize, usize)>,
    landmark_edges: Vec<(usize, String)>,
    gains: GainsFile,
    #[serde(default)]
    integration: Integration,
    #[serde(default)]
    landmark_mode: LandmarkMode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AgentFile {
    id: usize,
    position: Vector3,
    initial_orientation: OrientationFile,
    #[serde(default)]
    initial_angular_velocity: Vector3,
}

/// Either a row-major matrix or a product of axis rotations applied left to right.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum OrientationFile {
    Matrix([[f64; 3]; 3]),
    Product(Vec<AxisRotation>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisRotation {
    axis: Axis,
    /// radians
    angle: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainsFile {
    k_omega: f64,
    #[serde(default = "one")]
    default: f64,
    #[serde(default)]
    overrides: Vec<GainOverride>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainOverride {
    agent: usize,
    target: String,
    gain: f64,
}

impl OrientationFile {
    fn resolve(&self, agent: usize) -> Result<Rotation> {
        match self {
            OrientationFile::Matrix(m) => Rotation::new(Matrix3(*m))
                .map_err(|e| Error::Parse(format!("agents[{agent}].initial_orientation: {e}"))),
            OrientationFile::Product(parts) => Ok(parts.iter().fold(Rotation::IDENTITY, |acc, p| {
                let r = match p.axis {
                    Axis::X => rot_x(p.angle),
                    Axis::Y => rot_y(p.angle),
                    Axis::Z => rot_z(p.angle),
                };
                acc.compose(&r)
            })),
        }
    }
}

impl ScenarioFile {
    fn into_scenario(self) -> Result<Scenario> {
        let agents = self
            .agents
            .iter()
            .map(|a| {
                Ok(AgentSpec {
                    id: a.id,
                    position: a.position,
                    initial_orientation: a.initial_orientation.resolve(a.id)?,
                    initial_angular_velocity: a.initial_angular_velocity,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut gains =
            GainTable { k_omega: self.gains.k_omega, default_gain: self.gains.default, overrides: BTreeMap::new() };
        for o in &self.gains.overrides {
            let key: GainKey =
                o.target.parse().map_err(|e| Error::Parse(format!("gains.overrides (agent {}): {e}", o.agent)))?;
            gains.set(o.agent, key, o.gain);
        }
        Ok(Scenario {
            graph: SensingGraph { n: agents.len(), edges: self.edges, landmark_edges: self.landmark_edges },
            agents,
            landmarks: self.landmarks,
            gains,
            integration: self.integration,
            landmark_mode: self.landmark_mode,
        })
    }
}

impl From<&Scenario> for ScenarioFile {
    fn from(s: &Scenario) -> Self {
        ScenarioFile {
            agents: s
                .agents
                .iter()
                .map(|a| AgentFile {
                    id: a.id,
                    position: a.position,
                    initial_orientation: OrientationFile::Matrix(a.initial_orientation.matrix().0),
                    initial_angular_velocity: a.initial_angular_velocity,
                })
                .collect(),
            landmarks: s.landmarks.clone(),
            edges: s.graph.edges.clone(),
            landmark_edges: s.graph.landmark_edges.clone(),
            gains: GainsFile {
                k_omega: s.gains.k_omega,
                default: s.gains.default_gain,
                overrides: s
                    .gains
                    .overrides
                    .iter()
                    .map(|((agent, key), gain)| GainOverride { agent: *agent, target: key.to_string(), gain: *gain })
                    .collect(),
            },
            integration: s.integration,
            landmark_mode: s.landmark_mode,
        }
    }
}
