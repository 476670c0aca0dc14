//! Error vectors, error functions, the K-matrix and its critical points, and
//! the damped alignment law.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eigen::{sym_eigen3, SymEigen};
use crate::error::{Error, Result};
use crate::scenario::{GainKey, GainTable, Scenario};
use crate::sensing::{measure_all, AgentState, MeasurementSet, Target};
use crate::so3::{exp_so3, Matrix3, Rotation, UnitVector3, Vector3};

/// Eigenvalue gaps below this count as a repeated eigenvalue.
pub const SPECTRUM_GAP_TOL: f64 = 1e-9;

/// One reciprocal pair `(own, other)` entering an error function with weight `gain`.
/// At alignment `other = -own`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTerm {
    pub key: GainKey,
    pub gain: f64,
    pub own: Vector3,
    pub other: Vector3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorVector {
    pub agent: usize,
    pub e: Vector3,
}

/// `sum k (other x own)`
pub fn error_vector(terms: &[ErrorTerm]) -> Vector3 {
    terms.iter().fold(Vector3::ZERO, |acc, t| acc + t.other.cross(t.own) * t.gain)
}

/// `sum k (1 + own . other)`, evaluated as `1/2 sum k ||own + other||^2` so it
/// stays accurate near alignment.
pub fn error_function(terms: &[ErrorTerm]) -> f64 {
    terms.iter().map(|t| 0.5 * t.gain * (t.own + t.other).norm_squared()).sum()
}

fn missing(what: String) -> Error {
    Error::MissingMeasurement(what)
}

fn target_key(t: &Target) -> GainKey {
    match t {
        Target::Agent(j) => GainKey::Agent(*j),
        Target::Landmark(x) => GainKey::Landmark(x.clone()),
    }
}

/// Terms of agent 2: the bearing pair with agent 1, one pair per plane normal,
/// and the completion pair if present.
pub fn terms_agent2(m1: &MeasurementSet, m2: &MeasurementSet, gains: &GainTable) -> Result<Vec<ErrorTerm>> {
    let own = m2.bearings.get(&1).ok_or_else(|| missing("agent 2 bearing to 1".into()))?;
    let other = m1.bearings.get(&2).ok_or_else(|| missing("agent 1 bearing to 2".into()))?;
    let mut terms = vec![ErrorTerm {
        key: GainKey::Agent(1),
        gain: gains.get(2, &GainKey::Agent(1)),
        own: own.vector(),
        other: other.vector(),
    }];
    for (target, n2) in &m2.normals {
        let n1 = m1.normals.get(target).ok_or_else(|| missing(format!("agent 1 normal for {target:?}")))?;
        let key = target_key(target);
        terms.push(ErrorTerm { gain: gains.get(2, &key), key, own: n2.vector(), other: n1.vector() });
    }
    if let Some(v2) = &m2.virtual_direction {
        let v1 = m1.virtual_direction.ok_or_else(|| missing("agent 1 completion direction".into()))?;
        terms.push(ErrorTerm {
            key: GainKey::Virtual,
            gain: gains.get(2, &GainKey::Virtual),
            own: v2.vector(),
            other: v1.vector(),
        });
    }
    if m2.normals.is_empty() {
        return Err(missing("agent 2 has no plane normals".into()));
    }
    Ok(terms)
}

/// Terms of follower `i` given the bearings `j -> b_ji^j` its two neighbors send.
///
/// The virtual pair uses the follower's own cross direction against the
/// normalized cross product of the two received bearings, taken in the
/// opposite order so the pair is antiparallel at alignment.
pub fn terms_follower(
    i: usize,
    own: &MeasurementSet,
    neighbor_msgs: &BTreeMap<usize, UnitVector3>,
    gains: &GainTable,
) -> Result<Vec<ErrorTerm>> {
    if neighbor_msgs.len() != 2 {
        return Err(missing(format!("agent {i} needs messages from exactly 2 neighbors, got {}", neighbor_msgs.len())));
    }
    let mut terms = Vec::with_capacity(3);
    for (&j, msg) in neighbor_msgs {
        let b = own.bearings.get(&j).ok_or_else(|| missing(format!("agent {i} bearing to {j}")))?;
        let key = GainKey::Agent(j);
        terms.push(ErrorTerm { gain: gains.get(i, &key), key, own: b.vector(), other: msg.vector() });
    }
    let v = own.virtual_direction.ok_or_else(|| missing(format!("agent {i} virtual direction")))?;
    let msgs: Vec<Vector3> = neighbor_msgs.values().map(|m| m.vector()).collect();
    let other = received_cross(msgs[1], msgs[0]).ok_or_else(|| Error::DegenerateCross {
        context: format!("agent {i} received bearings"),
        norm: msgs[1].cross(msgs[0]).norm(),
    })?;
    terms.push(ErrorTerm { key: GainKey::Virtual, gain: gains.get(i, &GainKey::Virtual), own: v.vector(), other });
    Ok(terms)
}

/// Normalized `a x b` for the virtual pair. Only an exactly parallel pair is
/// rejected: the two vectors live in different frames, so no geometric
/// guarantee keeps them apart while the neighbors are still rotating.
pub(crate) fn received_cross(a: Vector3, b: Vector3) -> Option<Vector3> {
    let c = a.cross(b);
    let n = c.norm();
    (n > f64::MIN_POSITIVE && n.is_finite()).then(|| c * (1.0 / n))
}

pub fn error_vector_agent2(m1: &MeasurementSet, m2: &MeasurementSet, gains: &GainTable) -> Result<ErrorVector> {
    Ok(ErrorVector { agent: 2, e: error_vector(&terms_agent2(m1, m2, gains)?) })
}

pub fn error_vector_follower(
    i: usize,
    own: &MeasurementSet,
    neighbor_msgs: &BTreeMap<usize, UnitVector3>,
    gains: &GainTable,
) -> Result<ErrorVector> {
    Ok(ErrorVector { agent: i, e: error_vector(&terms_follower(i, own, neighbor_msgs, gains)?) })
}

/// Messages `j -> b_ji^j` that follower `i` receives.
pub fn neighbor_messages(s: &Scenario, sets: &[MeasurementSet], i: usize) -> Result<BTreeMap<usize, UnitVector3>> {
    s.graph
        .neighbors(i)
        .into_iter()
        .map(|j| {
            sets[j - 1]
                .bearings
                .get(&i)
                .copied()
                .map(|b| (j, b))
                .ok_or_else(|| missing(format!("agent {j} bearing to {i}")))
        })
        .collect()
}

/// Error terms of agent `i >= 2` built from the measurement sets of the whole network.
pub fn agent_terms(s: &Scenario, sets: &[MeasurementSet], i: usize) -> Result<Vec<ErrorTerm>> {
    match i {
        0 | 1 => Err(Error::InvalidArgument(format!("agent {i} has no error function"))),
        2 => terms_agent2(&sets[0], &sets[1], &s.gains),
        _ => terms_follower(i, &sets[i - 1], &neighbor_messages(s, sets, i)?, &s.gains),
    }
}

/// Terms of agent `i` with every neighbor replaced by its leader-aligned copy:
/// the received vectors are the global ones expressed in the leader's frame.
pub fn unforced_terms(s: &Scenario, states: &[AgentState], i: usize) -> Result<Vec<ErrorTerm>> {
    let r1 = states[0].r;
    let mut aligned = states.to_vec();
    for (k, st) in aligned.iter_mut().enumerate() {
        if k + 1 != i {
            st.r = r1;
        }
    }
    let sets = measure_all(s, &aligned)?;
    agent_terms(s, &sets, i)
}

// ---- K-matrix ----

/// `K = sum k b b^T` over an agent's global (or body) directions, with its
/// eigen-decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMatrix {
    pub agent: usize,
    pub k: Matrix3,
    pub eigen: SymEigen,
}

impl KMatrix {
    pub fn values(&self) -> [f64; 3] {
        self.eigen.values
    }

    /// Eigenvectors as columns.
    pub fn u(&self) -> Matrix3 {
        self.eigen.vectors
    }

    pub fn min_gap(&self) -> f64 {
        self.eigen.min_gap()
    }

    pub fn has_distinct_spectrum(&self) -> bool {
        self.min_gap() >= SPECTRUM_GAP_TOL
    }

    /// `lambda_max / lambda_min - 1`
    pub fn spread(&self) -> f64 {
        let v = self.values();
        v[2] / v[0] - 1.0
    }

    pub fn require_distinct(&self) -> Result<()> {
        if self.has_distinct_spectrum() {
            Ok(())
        } else {
            Err(Error::DegenerateSpectrum { gap: self.min_gap() })
        }
    }
}

pub fn k_matrix(agent: usize, directions: &[(UnitVector3, f64)]) -> KMatrix {
    let k = directions.iter().fold(Matrix3::ZERO, |acc, (b, g)| acc + b.vector().outer(b.vector()) * *g);
    let eigen = sym_eigen3(&k);
    if eigen.min_gap() < SPECTRUM_GAP_TOL {
        log::warn!("agent {agent}: K spectrum not distinct (gap {:.3e})", eigen.min_gap());
    }
    KMatrix { agent, k, eigen }
}

/// K built from the agent's own body-frame directions; similar to the global one.
pub fn local_k_matrix(i: usize, own: &MeasurementSet, gains: &GainTable, neighbors: &[usize]) -> Result<KMatrix> {
    let mut dirs = Vec::new();
    for &j in neighbors {
        let b = own.bearings.get(&j).ok_or_else(|| missing(format!("agent {i} bearing to {j}")))?;
        dirs.push((*b, gains.get(i, &GainKey::Agent(j))));
    }
    for (t, n) in &own.normals {
        dirs.push((*n, gains.get(i, &target_key(t))));
    }
    if let Some(v) = own.virtual_direction {
        dirs.push((v, gains.get(i, &GainKey::Virtual)));
    }
    Ok(k_matrix(i, &dirs))
}

/// Global-frame K of agent `i >= 2`.
pub fn scenario_k_matrix(s: &Scenario, i: usize) -> Result<KMatrix> {
    if i < 2 || i > s.n_agents() {
        return Err(Error::InvalidArgument(format!("agent {i} has no K matrix")));
    }
    let identity = vec![AgentState::at_rest(Rotation::IDENTITY); s.n_agents()];
    let sets = measure_all(s, &identity)?;
    let neighbors = s.graph.neighbors(i);
    local_k_matrix(i, &sets[i - 1], &s.gains, &neighbors)
}

/// Error function as a function of the offset `Q = R_i R_1^T` with aligned neighbors:
/// `tr(K) - tr(Q K)`.
pub fn offset_phi(k: &KMatrix, q: &Rotation) -> f64 {
    k.k.trace() - (*q.matrix() * k.k).trace()
}

/// Global-frame error vector for offset `Q`: `-vee(Q^T K - K Q)`. Its body-frame
/// counterpart differs by the rotation `R_1^T`.
pub fn offset_error(k: &KMatrix, q: &Rotation) -> Vector3 {
    let a = q.matrix().transpose() * k.k - k.k * *q.matrix();
    // a is skew by construction; read the vee directly
    -Vector3::new(a.0[2][1], a.0[0][2], a.0[1][0])
}

/// `{I, U D_1 U^T, U D_2 U^T, U D_3 U^T}` with `D_i = 2 e_i e_i^T - I`.
pub fn critical_points(k: &KMatrix) -> Result<[Rotation; 4]> {
    k.require_distinct()?;
    let u = k.u();
    let flip = |i: usize| {
        let e = u.column(i);
        let d = e.outer(e) * 2.0 - Matrix3::IDENTITY;
        Rotation::from_matrix_unchecked(d)
    };
    Ok([Rotation::IDENTITY, flip(0), flip(1), flip(2)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalKind {
    Minimum,
    Maximum,
    Saddle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    /// Offset `R_i R_1^T`.
    pub offset: Rotation,
    pub kind: CriticalKind,
    pub phi: f64,
}

/// Identity is the minimum; among the flips, the one with the largest error
/// function `2(lambda_j + lambda_k)` is the maximum and the other two are saddles.
pub fn classify_critical_points(k: &KMatrix) -> Result<[CriticalPoint; 4]> {
    let pts = critical_points(k)?;
    let v = k.values();
    // flip about eigenvector i keeps lambda_i and penalizes the other two
    let phis = [0.0, 2.0 * (v[1] + v[2]), 2.0 * (v[0] + v[2]), 2.0 * (v[0] + v[1])];
    let kinds = [CriticalKind::Minimum, CriticalKind::Maximum, CriticalKind::Saddle, CriticalKind::Saddle];
    Ok([0, 1, 2, 3].map(|n| CriticalPoint { offset: pts[n], kind: kinds[n], phi: phis[n] }))
}

// ---- control law and Lyapunov function ----

/// `-k_omega w - e`
pub fn control_update(w: Vector3, e: &ErrorVector, k_omega: f64) -> Vector3 {
    -(w * k_omega) - e.e
}

/// `phi + |w|^2 / 2 + k_v (e . w)`
pub fn lyapunov_value(phi: f64, w: Vector3, e: &ErrorVector, k_v: f64) -> f64 {
    phi + 0.5 * w.norm_squared() + k_v * e.e.dot(w)
}

/// Upper limits on the cross-term weight of the Lyapunov function.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct GainBounds {
    /// `sqrt(sigma)`, with sigma the empirical lower sandwich constant.
    pub k_v_max_positivity: f64,
    /// `4 k_omega / (4 k_tot + k_omega^2)`
    pub k_v_max_decrease: f64,
    pub sigma: f64,
}

impl GainBounds {
    pub fn k_v_max(&self) -> f64 {
        self.k_v_max_positivity.min(self.k_v_max_decrease)
    }
}

const SANDWICH_SAMPLES: usize = 10_000;
const SANDWICH_SEED: u64 = 0x5eed_0001;

pub fn gain_bounds(k: &KMatrix, k_omega: f64) -> GainBounds {
    // unit directions, so the trace is the gain total
    let k_tot = k.k.trace();
    let sigma = sandwich_constants(k, SANDWICH_SAMPLES, SANDWICH_SEED).0;
    GainBounds {
        k_v_max_positivity: sigma.sqrt(),
        k_v_max_decrease: 4.0 * k_omega / (4.0 * k_tot + k_omega * k_omega),
        sigma,
    }
}

/// Empirical `(sigma, gamma)` with `sigma |e|^2 <= phi` over all sampled offsets
/// and `phi <= gamma |e|^2` over those inside `phi < 2 (lambda_1 + lambda_2)`.
/// Half the samples are Haar-uniform, half are within 0.3 rad of identity.
pub fn sandwich_constants(k: &KMatrix, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = k.values();
    let region = 2.0 * (v[0] + v[1]);
    let mut sigma = f64::INFINITY;
    let mut gamma: f64 = 0.0;
    for n in 0..samples {
        let q = if n % 2 == 0 {
            haar_rotation(&mut rng)
        } else {
            let axis = random_unit(&mut rng);
            exp_so3(axis * (0.3 * rng.random::<f64>()))
        };
        let phi = offset_phi(k, &q);
        let e2 = offset_error(k, &q).norm_squared();
        if e2 < 1e-300 {
            continue;
        }
        let ratio = phi / e2;
        sigma = sigma.min(ratio);
        if phi < region {
            gamma = gamma.max(ratio);
        }
    }
    (sigma, gamma)
}

/// Uniform direction on the sphere.
pub fn random_unit<R: Rng>(rng: &mut R) -> Vector3 {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Haar-uniform rotation: uniform axis and an angle with density
/// `(1 - cos t) / pi` on `[0, pi]`, sampled by inverting its CDF `(t - sin t) / pi`.
pub fn haar_rotation<R: Rng>(rng: &mut R) -> Rotation {
    let axis = random_unit(rng);
    let u: f64 = rng.random();
    exp_so3(axis * haar_angle(u))
}

fn haar_angle(u: f64) -> f64 {
    use std::f64::consts::PI;
    let target = u * PI;
    // t - sin t is increasing on [0, pi]; bisect then polish with Newton
    let (mut lo, mut hi) = (0.0_f64, PI);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mid - mid.sin() < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---- local gain design ----

/// Gains chosen for one agent and the spread they achieve.
#[derive(Debug, Clone, PartialEq)]
pub struct GainDesign {
    pub agent: usize,
    pub gains: Vec<(GainKey, f64)>,
    pub spread: f64,
}

const RATIO_LIMIT: f64 = 1e3;

/// Picks the two neighbor gains, with the third-direction gain fixed at its
/// current value, so that `lambda_max / lambda_min - 1` is as close to
/// `target_spread` as possible without exceeding it.
///
/// The two measured directions with cosine `c` bound the achievable spread
/// from below by `2|c| / (1 - |c|)`, reached with equal gains; targets below
/// that fail with [`Error::SearchFailed`].
pub fn design_gains(i: usize, own: &MeasurementSet, target_spread: f64, gains: &GainTable) -> Result<GainDesign> {
    if !(target_spread >= 0.0) {
        return Err(Error::InvalidArgument(format!("target spread must be non-negative, got {target_spread}")));
    }
    let v = own.virtual_direction.ok_or_else(|| missing(format!("agent {i} has no third direction")))?;
    let (keys, dirs): (Vec<GainKey>, Vec<UnitVector3>) = if i == 2 {
        let b = own.bearings.get(&1).ok_or_else(|| missing("agent 2 bearing to 1".into()))?;
        if own.normals.len() != 1 {
            return Err(Error::InvalidArgument("gain design for agent 2 needs exactly one plane normal".into()));
        }
        let (t, n) = own.normals.iter().next().expect("one normal");
        (vec![GainKey::Agent(1), target_key(t)], vec![*b, *n])
    } else {
        let nb: Vec<usize> = own.bearings.keys().copied().filter(|&j| j < i).collect();
        if nb.len() != 2 {
            return Err(missing(format!("agent {i} needs two neighbor bearings")));
        }
        (nb.iter().map(|&j| GainKey::Agent(j)).collect(), vec![own.bearings[&nb[0]], own.bearings[&nb[1]]])
    };
    let k_virtual = gains.get(i, &GainKey::Virtual);
    let c = dirs[0].vector().dot(dirs[1].vector());

    let build = |log_ratio: f64| {
        let (a, b) = pair_gains(log_ratio, c, k_virtual);
        let k = k_matrix(i, &[(dirs[0], a), (dirs[1], b), (v, k_virtual)]);
        (a, b, k.spread())
    };

    let best = build(0.0);
    if best.2 > target_spread + 1e-12 {
        return Err(Error::SearchFailed { best_spread: best.2, target: target_spread });
    }
    let limit = RATIO_LIMIT.ln();
    let chosen = if build(limit).2 <= target_spread {
        build(limit)
    } else {
        // spread grows monotonically with |log ratio|
        let (mut lo, mut hi) = (0.0, limit);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if build(mid).2 <= target_spread {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        build(lo)
    };
    Ok(GainDesign {
        agent: i,
        gains: vec![(keys[0].clone(), chosen.0), (keys[1].clone(), chosen.1), (GainKey::Virtual, k_virtual)],
        spread: chosen.2,
    })
}

/// Gains `(a, b)` with `a / b = exp(log_ratio)`, scaled so the product of the
/// in-plane eigenvalues `a b (1 - c^2)` equals `k_virtual^2`, which keeps
/// `k_virtual` between them.
fn pair_gains(log_ratio: f64, c: f64, k_virtual: f64) -> (f64, f64) {
    let r = log_ratio.exp();
    let b = k_virtual / (r * (1.0 - c * c)).sqrt();
    (r * b, b)
}

/// Applies a design to a gain table.
pub fn apply_design(gains: &mut GainTable, design: &GainDesign) {
    for (key, g) in &design.gains {
        gains.set(design.agent, key.clone(), *g);
    }
}
