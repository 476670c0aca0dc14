use bearing_align::control::{
    agent_terms, error_function, error_vector, offset_error, offset_phi, sandwich_constants, scenario_k_matrix,
    unforced_terms,
};
use bearing_align::sensing::{bearing_time_derivative, Target};
use bearing_align::{
    bearing, exp_so3, frobenius_error, hat, landmark_normal, measure_all, project_to_so3, vee, AgentState, Frame,
    Matrix3, Rotation, Scenario, Simulator, UnitVector3, Vector3,
};
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vector3> {
    prop::array::uniform3(-r..r).prop_map(Vector3::from)
}

fn rotation() -> impl Strategy<Value = Rotation> {
    (vec3(1.0), 0.0..std::f64::consts::PI).prop_filter_map("axis", |(v, a)| {
        let n = v.norm();
        (n > 1e-3).then(|| exp_so3(v * (a / n)))
    })
}

fn states(n: usize) -> impl Strategy<Value = Vec<AgentState>> {
    prop::collection::vec((rotation(), vec3(1.0)), n)
        .prop_map(|v| v.into_iter().map(|(r, w)| AgentState { r, w }).collect())
}

fn mat_close(a: &Matrix3, b: &Matrix3, tol: f64) -> bool {
    (*a - *b).max_abs() < tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn hat_vee_inverse(x in vec3(10.0)) {
        prop_assert_eq!(vee(&hat(x)).unwrap(), x);
        let h = hat(x);
        prop_assert_eq!(h.transpose(), h * -1.0);
    }

    #[test]
    fn conjugation_and_commutator(r in rotation(), x in vec3(2.0), y in vec3(2.0)) {
        let m = *r.matrix();
        prop_assert!(mat_close(&(m * hat(x) * m.transpose()), &hat(m * x), 1e-12));
        prop_assert!(mat_close(&hat(x.cross(y)), &(hat(x) * hat(y) - hat(y) * hat(x)), 1e-12));
        prop_assert!(mat_close(&hat(x.cross(y)), &(y.outer(x) - x.outer(y)), 1e-12));
    }

    #[test]
    fn triple_product_and_jacobi(x in vec3(2.0), y in vec3(2.0), z in vec3(2.0)) {
        let t = x.dot(hat(y) * z);
        prop_assert!((t - z.dot(hat(x) * y)).abs() < 1e-12);
        prop_assert!((t - y.dot(hat(z) * x)).abs() < 1e-12);
        let j = x.cross(y.cross(z)) + y.cross(z.cross(x)) + z.cross(x.cross(y));
        prop_assert!(j.norm() < 1e-12);
    }

    #[test]
    fn exponential_is_a_rotation_of_the_right_angle(w in vec3(3.0)) {
        let r = exp_so3(w);
        prop_assert!(r.orthogonality_error() < 1e-12);
        prop_assert!((r.matrix().det() - 1.0).abs() < 1e-12);
        let t = w.norm() % std::f64::consts::TAU;
        let expected = if t > std::f64::consts::PI { std::f64::consts::TAU - t } else { t };
        prop_assert!((r.angle() - expected).abs() < 1e-7, "{} vs {}", r.angle(), expected);
        prop_assert!((r.apply(w) - w).norm() < 1e-12);
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal(r in rotation(), d in prop::array::uniform9(-1e-4..1e-4f64)) {
        let noisy = *r.matrix() + Matrix3::from_row_major(d);
        let p = project_to_so3(&noisy).unwrap();
        prop_assert!(p.orthogonality_error() < 1e-12);
        let again = project_to_so3(p.matrix()).unwrap();
        prop_assert!(mat_close(again.matrix(), p.matrix(), 1e-14));
        prop_assert!(frobenius_error(&p, &r) < 1e-3);
    }

    #[test]
    fn frobenius_error_is_bounded_and_symmetric(a in rotation(), b in rotation()) {
        let e = frobenius_error(&a, &b);
        prop_assert!((0.0..=8f64.sqrt() + 1e-12).contains(&e));
        prop_assert!((e - frobenius_error(&b, &a)).abs() < 1e-12);
        prop_assert!(frobenius_error(&a, &a) < 1e-12);
    }

    #[test]
    fn bearings_are_reciprocal_in_the_global_frame(
        pi in vec3(5.0), pj in vec3(5.0), ri in rotation(), rj in rotation(),
    ) {
        prop_assume!((pi - pj).norm() > 1e-3);
        let bij = bearing(pi, pj, &ri, 1).unwrap();
        let bji = bearing(pj, pi, &rj, 2).unwrap();
        prop_assert_eq!(bij.frame(), Frame::Body(1));
        prop_assert!((bij.vector().norm() - 1.0).abs() < 1e-14);
        prop_assert!((ri.apply(bij.vector()) + rj.apply(bji.vector())).norm() < 1e-12);
    }

    #[test]
    fn normals_are_frame_consistent(pi in vec3(5.0), pj in vec3(5.0), x in vec3(5.0), ri in rotation()) {
        let (u, v) = (pj - pi, x - pi);
        prop_assume!(u.norm() > 1e-2 && v.norm() > 1e-2 && u.cross(v).norm() > 1e-2 * u.norm() * v.norm());
        let n = landmark_normal(&bearing(pi, pj, &ri, 1).unwrap(), &bearing(pi, x, &ri, 1).unwrap()).unwrap();
        let global = u.cross(v) * (1.0 / u.cross(v).norm());
        prop_assert!((ri.apply(n.vector()) - global).norm() < 1e-12);
    }

    #[test]
    fn bearing_derivative_is_first_order(r in rotation(), w in vec3(1.0), g in vec3(1.0)) {
        prop_assume!(g.norm() > 1e-2);
        let b = UnitVector3::normalize(r.apply_inverse(g), Frame::Body(1)).unwrap();
        let rate = bearing_time_derivative(&b, w);
        let mut prev = f64::INFINITY;
        for h in [1e-4, 1e-5, 1e-6] {
            let moved = r.compose(&exp_so3(w * h)).apply_inverse(g) * (1.0 / g.norm());
            let err = ((moved - b.vector()) * (1.0 / h) - rate).norm();
            prop_assert!(err <= 2.0 * w.norm_squared() * h + 1e-9, "h {h}: {err}");
            prop_assert!(err <= prev + 1e-9);
            prev = err;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn error_vanishes_and_phi_nonnegative(st in states(8), r1 in rotation()) {
        let s = Scenario::eight_agent_default();
        let sets = measure_all(&s, &st).unwrap();
        for i in 2..=8 {
            let terms = agent_terms(&s, &sets, i).unwrap();
            prop_assert!(error_function(&terms) >= 0.0);
        }
        let aligned = vec![AgentState::at_rest(r1); 8];
        let sets = measure_all(&s, &aligned).unwrap();
        for i in 2..=8 {
            let terms = agent_terms(&s, &sets, i).unwrap();
            prop_assert!(error_vector(&terms).norm() < 1e-12);
            prop_assert!(error_function(&terms) < 1e-24);
        }
    }

    #[test]
    fn error_is_linear_in_gains(st in states(8), agent in 2usize..=8, c in 0.1..10.0f64) {
        let s = Scenario::eight_agent_default();
        let mut scaled = s.clone();
        let keys = scaled.gain_keys(agent);
        scaled.gains.scale_agent(agent, &keys, c);
        let sets = measure_all(&s, &st).unwrap();
        let a = agent_terms(&s, &sets, agent).unwrap();
        let b = agent_terms(&scaled, &sets, agent).unwrap();
        prop_assert!((error_vector(&b) - error_vector(&a) * c).norm() <= 1e-12 * (1.0 + c * error_vector(&a).norm()));
        prop_assert!((error_function(&b) - c * error_function(&a)).abs() <= 1e-12 * (1.0 + c * error_function(&a)));
    }

    /// The error vector changes at most linearly with the angular velocity:
    /// `|de/dt| <= k_tot |w|` for agent 2 and for the unforced follower error.
    #[test]
    fn error_rate_bounded_by_gain_total(st in states(8), agent in 2usize..=8) {
        let s = Scenario::eight_agent_default();
        let h = 1e-6;
        let e_at = |states: &[AgentState]| -> Vector3 {
            if agent == 2 {
                let sets = measure_all(&s, states).unwrap();
                error_vector(&agent_terms(&s, &sets, 2).unwrap())
            } else {
                error_vector(&unforced_terms(&s, states, agent).unwrap())
            }
        };
        let shift = |t: f64| {
            let mut v = st.clone();
            v[0].w = Vector3::ZERO;
            let a = &mut v[agent - 1];
            a.r = a.r.compose(&exp_so3(a.w * t));
            v
        };
        let rate = (e_at(&shift(h)) - e_at(&shift(-h))) * (1.0 / (2.0 * h));
        let w = st[agent - 1].w.norm();
        prop_assert!(rate.norm() <= s.total_gain(agent) * w * (1.0 + 1e-6) + 1e-9);
    }
}

#[test]
fn squared_velocity_form_of_the_rate_bound_fails_for_slow_rotation() {
    // |de/dt| grows linearly in |w|, so a bound in |w|^2 cannot hold as w -> 0.
    let s = Scenario::eight_agent_default();
    let mut st = vec![AgentState::at_rest(s.agents[0].initial_orientation); 8];
    st[1] = AgentState { r: exp_so3(Vector3::new(0.4, -0.2, 0.3)), w: Vector3::new(1e-3, 0.0, 0.0) };
    let h = 1e-7;
    let e_at = |t: f64| {
        let mut v = st.clone();
        v[1].r = v[1].r.compose(&exp_so3(v[1].w * t));
        let sets = measure_all(&s, &v).unwrap();
        error_vector(&agent_terms(&s, &sets, 2).unwrap())
    };
    let rate = ((e_at(h) - e_at(-h)) * (1.0 / (2.0 * h))).norm();
    let w = st[1].w.norm();
    assert!(rate > s.total_gain(2) * w * w, "rate {rate}");
    assert!(rate <= s.total_gain(2) * w);
}

#[test]
fn sandwich_ratio_stays_in_a_positive_bounded_interval() {
    let s = Scenario::eight_agent_default();
    for i in 2..=8 {
        let k = scenario_k_matrix(&s, i).unwrap();
        let (sigma, gamma) = sandwich_constants(&k, 10_000, 99);
        assert!(sigma > 0.0 && gamma.is_finite() && gamma >= sigma, "agent {i}: {sigma} {gamma}");
        // a point very close to identity, where the ratio tends to its quadratic limit
        let q = exp_so3(Vector3::new(1e-3, 2e-3, -1e-3));
        let ratio = offset_phi(&k, &q) / offset_error(&k, &q).norm_squared();
        assert!(ratio >= sigma * (1.0 - 1e-3) && ratio <= gamma * (1.0 + 1e-3), "agent {i}: {ratio}");
    }
}

#[test]
fn leader_never_moves_and_rotations_stay_valid() {
    let mut s = Scenario::eight_agent_default();
    s.integration.t_end = 5.0;
    s.integration.log_stride = 10;
    let log = Simulator::new(&s).unwrap().run().unwrap();
    let r1 = *s.agents[0].initial_orientation.matrix();
    for row in &log.samples {
        assert_eq!(row[0].r, r1);
        assert_eq!(row[0].w, Vector3::ZERO);
        for a in row {
            let r = Rotation::new(a.r).unwrap();
            assert!(r.orthogonality_error() < 1e-12);
        }
    }
}

#[test]
fn measurement_sets_cover_neighbors_and_references() {
    let s = Scenario::eight_agent_default();
    let st = vec![AgentState::at_rest(Rotation::IDENTITY); 8];
    let sets = measure_all(&s, &st).unwrap();
    assert!(sets[1].bearings.contains_key(&1));
    assert!(sets[1].normals.contains_key(&Target::Landmark("x1".into())));
    for i in 3..=8 {
        for j in s.graph.neighbors(i) {
            assert!(sets[i - 1].bearings.contains_key(&j), "agent {i} lacks bearing to {j}");
        }
        assert!(sets[i - 1].virtual_direction.is_some());
    }
}
