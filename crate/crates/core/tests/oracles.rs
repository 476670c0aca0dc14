//! Cross-checks of the hand-rolled linear algebra against nalgebra.

use bearing_align::control::haar_rotation;
use bearing_align::eigen::sym_eigen3;
use bearing_align::scenario::coplanarity_measure;
use bearing_align::{exp_so3, project_to_so3, Matrix3, Vector3};
use nalgebra as na;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_na(m: &Matrix3) -> na::Matrix3<f64> {
    na::Matrix3::from_fn(|i, j| m.0[i][j])
}

fn rand_sym(rng: &mut ChaCha8Rng) -> Matrix3 {
    let mut m = Matrix3::ZERO;
    for i in 0..3 {
        for j in i..3 {
            let v = rng.random_range(-2.0..2.0);
            m.0[i][j] = v;
            m.0[j][i] = v;
        }
    }
    m
}

#[test]
fn eigenvalues_match_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..2000 {
        let m = rand_sym(&mut rng);
        let ours = sym_eigen3(&m);
        let mut theirs: Vec<f64> = to_na(&m).symmetric_eigen().eigenvalues.iter().copied().collect();
        theirs.sort_by(f64::total_cmp);
        for k in 0..3 {
            assert!((ours.values[k] - theirs[k]).abs() < 1e-12, "{:?} vs {:?}", ours.values, theirs);
        }
        assert!((ours.reconstruct() - m).max_abs() < 1e-12);
        let u = ours.vectors;
        assert!((u.transpose() * u - Matrix3::IDENTITY).max_abs() < 1e-12);
    }
}

#[test]
fn eigenvectors_of_near_degenerate_spectra() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..200 {
        let q = *haar_rotation(&mut rng).matrix();
        let gap = 10f64.powi(-(k % 10));
        let m = q * Matrix3::diag([1.0, 1.0 + gap, 3.0]) * q.transpose();
        let e = sym_eigen3(&m);
        assert!((e.reconstruct() - m).max_abs() < 1e-12);
        // the isolated eigenvector is always well determined
        let v = e.vector(2);
        assert!((v.dot(q.column(2)).abs() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn polar_projection_matches_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let r = *haar_rotation(&mut rng).matrix();
        let mut a = r;
        for row in a.0.iter_mut() {
            for x in row.iter_mut() {
                *x += rng.random_range(-0.2..0.2);
            }
        }
        if a.det() <= 0.1 {
            continue;
        }
        let svd = to_na(&a).svd(true, true);
        let polar = svd.u.unwrap() * svd.v_t.unwrap();
        let ours = project_to_so3(&a).unwrap();
        assert!((to_na(ours.matrix()) - polar).abs().max() < 1e-11);
    }
}

#[test]
fn exponential_matches_nalgebra_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let w = Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
        let theirs = na::Rotation3::new(na::Vector3::new(w.x, w.y, w.z));
        assert!((to_na(exp_so3(w).matrix()) - theirs.matrix()).abs().max() < 1e-13);
    }
}

#[test]
fn coplanarity_matches_singular_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 0..500 {
        let count = 4 + n % 4;
        let flat = rng.random_range(0.0..1.0) * if n % 3 == 0 { 1e-7 } else { 1.0 };
        let pts: Vec<Vector3> = (0..count)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    flat * rng.random_range(-3.0..3.0),
                )
            })
            .collect();
        let c = pts.iter().fold(Vector3::ZERO, |a, p| a + *p) * (1.0 / count as f64);
        let m = na::DMatrix::from_fn(count, 3, |i, j| (pts[i] - c)[j]);
        let sv = m.singular_values();
        let hi = sv.max();
        let lo = sv.min();
        let ours = coplanarity_measure(&pts).unwrap();
        assert!((ours - lo / hi).abs() < 1e-8, "{ours} vs {}", lo / hi);
    }
}
