use super::linalg3::{self as la, Vec3, IDENTITY3};
use super::pose::SimilaritySim3;
use crate::error::{Error, Result};

/// Least-squares similarity (or rigid, with `with_scale = false`) mapping
/// `src` onto `dst`: minimizes `Σ ‖s R srcᵢ + t − dstᵢ‖²`.
///
/// Closed form from the cross-covariance SVD with a reflection guard.
pub fn umeyama_align(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<SimilaritySim3> {
    if src.len() != dst.len() {
        return Err(Error::shape(format!("{} source vs {} target points", src.len(), dst.len())));
    }
    let n = src.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("{n} point pairs, need at least 3")));
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = la::scale(src.iter().fold([0.0; 3], |a, p| la::add(a, *p)), inv_n);
    let mu_d = la::scale(dst.iter().fold([0.0; 3], |a, p| la::add(a, *p)), inv_n);

    let mut cov = [[0.0; 3]; 3];
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = la::sub(*s, mu_s);
        let b = la::sub(*d, mu_d);
        var_s += la::dot(a, a);
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += b[i] * a[j];
            }
        }
    }
    var_s *= inv_n;
    cov.iter_mut().flatten().for_each(|v| *v *= inv_n);

    let (u, sigma, v) = la::svd3(&cov);
    if !(var_s > 0.0) || sigma[1] <= 1e-12 * sigma[0].max(f64::MIN_POSITIVE) || sigma[0] == 0.0 {
        return Err(Error::Degenerate(
            "points are collinear or coincident; covariance rank below 2".into(),
        ));
    }
    let mut d = IDENTITY3;
    if la::det(&u) * la::det(&v) < 0.0 {
        d[2][2] = -1.0;
    }
    let rotation = la::mat_mul(&la::mat_mul(&u, &d), &la::transpose(&v));
    let scale = if with_scale {
        (sigma[0] * d[0][0] + sigma[1] * d[1][1] + sigma[2] * d[2][2]) / var_s
    } else {
        1.0
    };
    let translation = la::sub(mu_d, la::scale(la::mat_vec(&rotation, mu_s), scale));
    SimilaritySim3::new(scale, rotation, translation)
        .map_err(|e| Error::Degenerate(format!("alignment produced an invalid transform: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    fn cloud(rng: &mut RngState, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect()
    }

    #[test]
    fn identical_clouds_give_identity() {
        let mut rng = RngState::new(1);
        let src = cloud(&mut rng, 10);
        let g = umeyama_align(&src, &src, true).unwrap();
        assert!((g.scale - 1.0).abs() < 1e-12);
        assert!(la::frobenius(&la::mat_sub(&g.rotation, &IDENTITY3)) < 1e-12);
        assert!(g.residual(&src, &src) < 1e-24);
    }

    #[test]
    fn recovers_known_similarity() {
        let mut rng = RngState::new(2);
        for _ in 0..20 {
            let src = cloud(&mut rng, 12);
            let truth = SimilaritySim3::new(
                rng.uniform(0.2, 5.0),
                la::random_rotation(&mut rng),
                [rng.normal() * 4.0, rng.normal(), rng.normal()],
            )
            .unwrap();
            let dst: Vec<Vec3> = src.iter().map(|p| truth.transform_point(*p)).collect();
            let g = umeyama_align(&src, &dst, true).unwrap();
            assert!((g.scale - truth.scale).abs() < 1e-9);
            assert!(la::frobenius(&la::mat_sub(&g.rotation, &truth.rotation)) < 1e-9);
            assert!(la::norm(la::sub(g.translation, truth.translation)) < 1e-9);
            assert!(g.residual(&src, &dst) < 1e-18);
        }
    }

    #[test]
    fn planar_points_are_fine_collinear_are_not() {
        let planar = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let shifted: Vec<Vec3> = planar.iter().map(|p| la::add(*p, [1.0, 2.0, 3.0])).collect();
        let g = umeyama_align(&planar, &shifted, true).unwrap();
        assert!(g.residual(&planar, &shifted) < 1e-24);

        let line = vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]];
        assert!(matches!(umeyama_align(&line, &line, true), Err(Error::Degenerate(_))));
        assert!(matches!(umeyama_align(&line[..2], &line[..2], true), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rigid_mode_keeps_unit_scale() {
        let mut rng = RngState::new(3);
        let src = cloud(&mut rng, 8);
        let dst: Vec<Vec3> = src.iter().map(|p| la::scale(*p, 3.0)).collect();
        let g = umeyama_align(&src, &dst, false).unwrap();
        assert_eq!(g.scale, 1.0);
    }

    #[test]
    fn noisy_fit_beats_identity_baseline() {
        let mut rng = RngState::new(4);
        let src = cloud(&mut rng, 30);
        let dst: Vec<Vec3> = src
            .iter()
            .map(|p| la::add(*p, [0.05 * rng.normal(), 0.05 * rng.normal(), 0.05 * rng.normal()]))
            .collect();
        let g = umeyama_align(&src, &dst, true).unwrap();
        assert!(g.residual(&src, &dst) <= SimilaritySim3::IDENTITY.residual(&src, &dst));
    }

    #[test]
    fn residual_is_invariant_to_a_shared_similarity() {
        let mut rng = RngState::new(5);
        let src = cloud(&mut rng, 10);
        let dst: Vec<Vec3> = cloud(&mut rng, 10);
        let base = umeyama_align(&src, &dst, true).unwrap().residual(&src, &dst);
        let h = SimilaritySim3::new(1.0, la::random_rotation(&mut rng), [3.0, -1.0, 2.0]).unwrap();
        let src2: Vec<Vec3> = src.iter().map(|p| h.transform_point(*p)).collect();
        let dst2: Vec<Vec3> = dst.iter().map(|p| h.transform_point(*p)).collect();
        let moved = umeyama_align(&src2, &dst2, true).unwrap().residual(&src2, &dst2);
        assert!((base - moved).abs() < 1e-9);
    }
}
