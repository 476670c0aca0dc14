//! Body-frame direction measurements: bearings, landmark plane normals and
//! the synthesized third directions.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scenario::{Reference, Scenario, COLLOCATION_TOL};
use crate::so3::{Frame, Rotation, UnitVector3, Vector3};

/// Cross products shorter than this are rejected.
pub const CROSS_TOL: f64 = 1e-6;

/// Orientation and body-frame angular velocity of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub r: Rotation,
    /// rad/s
    pub w: Vector3,
}

impl AgentState {
    pub fn at_rest(r: Rotation) -> Self {
        Self { r, w: Vector3::ZERO }
    }
}

/// What a plane normal is built against besides the partner agent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Target {
    Agent(usize),
    Landmark(String),
}

impl From<&Reference> for Target {
    fn from(r: &Reference) -> Self {
        match r {
            Reference::Agent(j) => Target::Agent(*j),
            Reference::Landmark(x) => Target::Landmark(x.clone()),
        }
    }
}

/// Everything agent `owner` measures, all in its body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub owner: usize,
    /// Bearings to every agent it senses or that senses it.
    pub bearings: BTreeMap<usize, UnitVector3>,
    /// Plane normals (agents 1 and 2 only).
    pub normals: BTreeMap<Target, UnitVector3>,
    /// Follower cross direction, or the completion direction of agents 1 and 2.
    pub virtual_direction: Option<UnitVector3>,
}

/// `R_i^T (p_j - p_i) / ||p_j - p_i||` in the body frame of agent `owner`.
pub fn bearing(p_i: Vector3, p_j: Vector3, r_i: &Rotation, owner: usize) -> Result<UnitVector3> {
    let d = p_j - p_i;
    let n = d.norm();
    if n <= COLLOCATION_TOL {
        return Err(Error::Collocated(format!("agent {owner} and its target at distance {n:.3e}")));
    }
    UnitVector3::normalize(r_i.apply_inverse(d * (1.0 / n)), Frame::Body(owner))
}

fn unit_cross(a: &UnitVector3, b: &UnitVector3, context: &str) -> Result<UnitVector3> {
    if a.frame() != b.frame() {
        return Err(Error::InvalidArgument(format!("{context}: frames differ ({:?} vs {:?})", a.frame(), b.frame())));
    }
    let c = a.vector().cross(b.vector());
    let n = c.norm();
    if !(n > CROSS_TOL) {
        return Err(Error::DegenerateCross { context: context.to_string(), norm: n });
    }
    Ok(UnitVector3::normalize(c, a.frame()).expect("nonzero cross product"))
}

/// Unit normal of the plane spanned by the two bearings, `b_ij x b_ix` normalized.
pub fn landmark_normal(b_ij: &UnitVector3, b_ix: &UnitVector3) -> Result<UnitVector3> {
    unit_cross(b_ij, b_ix, "landmark normal")
}

/// Normalized cross product of a follower's two neighbor bearings.
pub fn virtual_third_direction(b_ij: &UnitVector3, b_ik: &UnitVector3) -> Result<UnitVector3> {
    unit_cross(b_ij, b_ik, "virtual direction")
}

/// Rate of change of a body-frame bearing to a stationary point while the
/// body rotates with angular velocity `w`: `b x w`.
pub fn bearing_time_derivative(b: &UnitVector3, w: Vector3) -> Vector3 {
    b.vector().cross(w)
}

/// Synthesizes every agent's measurement set for the given orientations.
pub fn measure_all(s: &Scenario, states: &[AgentState]) -> Result<Vec<MeasurementSet>> {
    let n = s.n_agents();
    if states.len() != n {
        return Err(Error::InvalidArgument(format!("expected {n} states, got {}", states.len())));
    }
    (1..=n).map(|i| measure_agent(s, states, i)).collect()
}

fn measure_agent(s: &Scenario, states: &[AgentState], i: usize) -> Result<MeasurementSet> {
    let r_i = &states[i - 1].r;
    let p_i = s.position(i);
    let with_context = |e: Error| match e {
        Error::Collocated(m) => Error::Collocated(format!("agent {i}: {m}")),
        Error::DegenerateCross { context, norm } => {
            Error::DegenerateCross { context: format!("agent {i} {context}"), norm }
        }
        other => other,
    };

    let mut targets = s.graph.neighbors(i);
    targets.extend(s.graph.dependents(i));
    let mut bearings = BTreeMap::new();
    for j in targets {
        bearings.insert(j, bearing(p_i, s.position(j), r_i, i).map_err(with_context)?);
    }

    let mut normals = BTreeMap::new();
    let mut virtual_direction = None;
    if i <= 2 && n_at_least(s, 2) {
        let partner = 3 - i;
        let b_partner = bearing(p_i, s.position(partner), r_i, i).map_err(with_context)?;
        bearings.insert(partner, b_partner);
        let refs = s.references();
        for (reference, pos) in &refs {
            let b_ref = bearing(p_i, *pos, r_i, i).map_err(with_context)?;
            let normal = landmark_normal(&b_partner, &b_ref).map_err(with_context)?;
            normals.insert(Target::from(reference), normal);
        }
        if s.uses_completion() {
            if let Some((first, _)) = refs.first() {
                let normal = normals[&Target::from(first)];
                // opposite factor order on the two sides so the pair is antiparallel at alignment
                let m = if i == 2 {
                    unit_cross(&b_partner, &normal, "completion direction")
                } else {
                    unit_cross(&normal, &b_partner, "completion direction")
                };
                virtual_direction = Some(m.map_err(with_context)?);
            }
        }
    } else if i >= 3 {
        let nb = s.graph.neighbors(i);
        if nb.len() == 2 {
            let v = virtual_third_direction(&bearings[&nb[0]], &bearings[&nb[1]]).map_err(with_context)?;
            virtual_direction = Some(v);
        }
    }
    Ok(MeasurementSet { owner: i, bearings, normals, virtual_direction })
}

fn n_at_least(s: &Scenario, n: usize) -> bool {
    s.n_agents() >= n
}
